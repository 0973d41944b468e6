mod common;

use common::{random_matrix, rows};
use rand::Rng;
use tcl_core::losses::{
    assign_pseudo_labels, contrastive_terms_mean, cosine_logits, group_contrastive_value, group_contrastive_value_with,
    instance_contrastive_value, SimilarityConfig,
};
use tcl_core::rng::stream_raw;
use tcl_core::{Graph, Tensor};

fn sim() -> SimilarityConfig {
    SimilarityConfig::default()
}

#[test]
fn instance_loss_matches_brute_force() {
    for trial in 0..200u64 {
        let b = 2 + (trial as usize % 6);
        let c = [3, 8][trial as usize % 2];
        let f = random_matrix(b, c, trial, 0);
        let s = random_matrix(b, c, trial, 1);
        let lib = instance_contrastive_value(&f, &s, &sim()).unwrap();
        let oracle = common::instance_loss(&rows(&f), &rows(&s));
        assert!((lib - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "trial {trial}: {lib} vs {oracle}");
    }
}

#[test]
fn group_loss_matches_brute_force_with_shared_groups() {
    let mut multi = 0;
    for trial in 0..300u64 {
        let b = 3 + (trial as usize % 6);
        let c = [3, 8][trial as usize % 2];
        let f = random_matrix(b, c, trial, 2);
        let s = random_matrix(b, c, trial, 3);
        let (fl, sl) = (assign_pseudo_labels(&f).unwrap(), assign_pseudo_labels(&s).unwrap());
        let fr = rows(&f);
        assert_eq!(fl, fr.iter().map(|r| common::argmax(r)).collect::<Vec<_>>());
        let lib = group_contrastive_value(&f, &s, &sim()).unwrap();
        match common::group_loss(&fr, &rows(&s), &fl, &sl, c) {
            Some(oracle) => {
                assert!((lib - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "trial {trial}: {lib} vs {oracle}");
                let mut sorted = fl.clone();
                sorted.sort_unstable();
                multi += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));
            }
            None => assert_eq!(lib, 0.0),
        }
    }
    assert!(multi > 50, "only {multi} trials exercised multi-member groups");
}

#[test]
fn ratio_and_lse_forms_agree() {
    let mut rng = stream_raw(7, 0);
    for _ in 0..200 {
        let n = rng.random_range(3..9);
        let logits: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rng.random_range(0..n);
        let p = (a + 1 + rng.random_range(0..n - 1)) % n;
        let mut g = Graph::new();
        let l = g.constant(Tensor::matrix(n, n, logits.clone()).unwrap());
        let v = contrastive_terms_mean(&mut g, l, &[(a, p)]).unwrap();
        let lse = g.value(v).item();
        let den: f64 = (0..n).filter(|&j| j != a).map(|j| logits[a * n + j].exp()).sum();
        let ratio = -(logits[a * n + p].exp() / den).ln();
        assert!((lse - ratio).abs() < 1e-9, "{lse} vs {ratio}");
    }
}

#[test]
fn every_term_is_positive_and_bounded() {
    let tau = sim().temperature;
    for trial in 0..200u64 {
        let b = 2 + (trial as usize % 5);
        let f = random_matrix(b, 8, trial, 4);
        let s = random_matrix(b, 8, trial, 5);
        let mut g = Graph::new();
        let (fv, sv) = (g.constant(f), g.constant(s));
        let z = g.concat(&[fv, sv]).unwrap();
        let logits = cosine_logits(&mut g, z, &sim()).unwrap();
        let upper = (1.0 + 2.0 * (b as f64 - 1.0) * (2.0 / tau).exp()).ln();
        for i in 0..b {
            for (a, p) in [(i, b + i), (b + i, i)] {
                let t = contrastive_terms_mean(&mut g, logits, &[(a, p)]).unwrap();
                let v = g.value(t).item();
                assert!(v > 0.0 && v <= upper + 1e-12, "{v} outside (0, {upper}]");
            }
        }
    }
}

#[test]
fn explicit_labels_group_loss_matches_brute_force() {
    let mut rng = stream_raw(11, 0);
    for trial in 0..200u64 {
        let b = rng.random_range(2..7);
        let c = 4;
        let f = random_matrix(b, c, trial, 6);
        let s = random_matrix(b, c, trial, 7);
        let fl: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let sl: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let lib = group_contrastive_value_with(&f, &s, &fl, &sl, &sim()).unwrap();
        let oracle = common::group_loss(&rows(&f), &rows(&s), &fl, &sl, c).unwrap_or(0.0);
        assert!((lib - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "{lib} vs {oracle}");
    }
}
