//! The ten acceptance criteria, one PASS/FAIL line each. Runs as a plain
//! binary so the lines are always shown; exits non-zero if any fails.
//!
//! Criteria 6-9 share one set of training runs on the default task.

mod common;

use common::{random_matrix, rows};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};
use tcl_core::config::{ExperimentConfig, StageSchedule};
use tcl_core::data::tsn_sample_indices;
use tcl_core::eval::PseudoLabelQuality;
use tcl_core::gradcheck::{run_gradient_suite, run_op_suite, SuiteConfig, DEFAULT_STEP, TOLERANCE};
use tcl_core::grid::{mean_std, run_grid, GridSpec};
use tcl_core::losses::{
    assign_pseudo_labels, group_contrastive_value, group_contrastive_value_with, instance_contrastive_value, similarity,
    SimilarityConfig,
};
use tcl_core::rng::stream_raw;
use tcl_core::trainer::{json_pretty, metrics_csv, run_pipeline_on, EpochMetrics, PreparedData, RunOptions, Stage, Variant};
use tcl_core::Tensor;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let ops = run_op_suite(0, DEFAULT_STEP).unwrap();
    let suite = run_gradient_suite(&SuiteConfig::default()).unwrap();
    let elapsed = t.elapsed();
    let op_max = ops.iter().fold(0.0f64, |m, c| m.max(c.rel_error));
    let per_loss: Vec<String> = suite
        .losses
        .iter()
        .map(|l| format!("{} {:.1e}", l.name, l.max_rel_error))
        .collect();
    let pass = suite.instances >= 100 && suite.max_rel_error() < TOLERANCE && op_max < TOLERANCE && elapsed < Duration::from_secs(120);
    verdict(
        pass,
        format!(
            "{} instances, {}, ops {:.1e}, {} with multi-member groups, {:.1?}",
            suite.instances,
            per_loss.join(", "),
            op_max,
            suite.multi_member_groups,
            elapsed
        ),
    )
}

fn kernel_closed_forms() -> Verdict {
    let cfg = SimilarityConfig::default();
    let (hi, lo) = ((1.0f64 / cfg.temperature).exp(), (-1.0f64 / cfg.temperature).exp());
    let mut rng = stream_raw(1, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        // Gram-Schmidt for an orthogonal partner
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / u.iter().map(|a| a * a).sum::<f64>();
        let orth: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - k * b).collect();
        worst = worst
            .max((similarity(&u, &u, &cfg).unwrap() - hi).abs())
            .max((similarity(&u, &neg, &cfg).unwrap() - lo).abs())
            .max((similarity(&u, &orth, &cfg).unwrap() - 1.0).abs());
    }
    verdict(worst < 1e-12, format!("max deviation {worst:.1e} over 100 random u"))
}

fn invariance_suite() -> Verdict {
    let cfg = SimilarityConfig::default();
    let mut rng = stream_raw(2, 0);
    let (mut scale_err, mut perm_err, mut argmax_flips) = (0.0f64, 0.0f64, 0usize);
    for trial in 0..1000u64 {
        let b = rng.random_range(2..9);
        let c = [3, 8][rng.random_range(0..2)];
        let f = random_matrix(b, c, trial, 10);
        let s = random_matrix(b, c, trial, 11);
        let ic = instance_contrastive_value(&f, &s, &cfg).unwrap();
        let gc = group_contrastive_value(&f, &s, &cfg).unwrap();

        let k: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
        let scale = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect()).unwrap();
        let (fk, sk) = (scale(&f), scale(&s));
        scale_err = scale_err
            .max((instance_contrastive_value(&fk, &sk, &cfg).unwrap() - ic).abs())
            .max((group_contrastive_value(&fk, &sk, &cfg).unwrap() - gc).abs());
        if assign_pseudo_labels(&fk).unwrap() != assign_pseudo_labels(&f).unwrap() {
            argmax_flips += 1;
        }

        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut rng);
        let permute = |t: &Tensor| {
            let r = rows(t);
            Tensor::matrix(b, c, order.iter().flat_map(|&i| r[i].clone()).collect()).unwrap()
        };
        let (fp, sp) = (permute(&f), permute(&s));
        perm_err = perm_err
            .max((instance_contrastive_value(&fp, &sp, &cfg).unwrap() - ic).abs())
            .max((group_contrastive_value(&fp, &sp, &cfg).unwrap() - gc).abs());
    }
    verdict(
        scale_err < 1e-10 && perm_err < 1e-12 && argmax_flips == 0,
        format!("1000 trials each: scaling {scale_err:.1e}, permutation {perm_err:.1e}, argmax changes {argmax_flips}"),
    )
}

fn singleton_groups() -> Verdict {
    let cfg = SimilarityConfig::default();
    let mut rng = stream_raw(3, 0);
    let (mut lib_gap, mut oracle_gap) = (0.0f64, 0.0f64);
    for trial in 0..500u64 {
        let b = rng.random_range(2..5);
        let classes = 8;
        let f = random_matrix(b, classes, trial, 20);
        let s = random_matrix(b, classes, trial, 21);
        let mut labels: Vec<usize> = (0..classes).collect();
        labels.shuffle(&mut rng);
        labels.truncate(b);
        let gc = group_contrastive_value_with(&f, &s, &labels, &labels, &cfg).unwrap();
        let ic = instance_contrastive_value(&f, &s, &cfg).unwrap();
        let oracle_ic = common::instance_loss(&rows(&f), &rows(&s));
        let oracle_gc = common::group_loss(&rows(&f), &rows(&s), &labels, &labels, classes).unwrap();
        lib_gap = lib_gap.max((gc - ic).abs());
        oracle_gap = oracle_gap.max((gc - oracle_gc).abs()).max((ic - oracle_ic).abs()).max((oracle_gc - oracle_ic).abs());
    }
    verdict(
        lib_gap < 1e-12 && oracle_gap < 1e-12,
        format!("500 batches with B<=4: |L_gc - L_ic| {lib_gap:.1e}, vs brute force {oracle_gap:.1e}"),
    )
}

fn tsn_sampling() -> Verdict {
    let mut problems = Vec::new();
    for (total, k) in [(32usize, 8usize), (32, 4), (9, 4), (17, 5)] {
        let bounds: Vec<(usize, usize)> = (0..k).map(|i| (i * total / k, (i + 1) * total / k)).collect();
        let mut rng = stream_raw(4, total as u64 * 100 + k as u64);
        let mut seen = vec![BTreeSet::new(); k];
        for _ in 0..10_000 {
            let idx = tsn_sample_indices(total, k, &mut rng).unwrap();
            if idx.len() != k || idx.windows(2).any(|w| w[0] >= w[1]) {
                problems.push(format!("({total},{k}) not strictly increasing: {idx:?}"));
                break;
            }
            for (i, &x) in idx.iter().enumerate() {
                if x < bounds[i].0 || x >= bounds[i].1 {
                    problems.push(format!("({total},{k}) index {x} outside segment {i}"));
                }
                seen[i].insert(x);
            }
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if seen[i].len() != hi - lo {
                problems.push(format!("({total},{k}) segment {i} realized {} of {} positions", seen[i].len(), hi - lo));
            }
        }
    }
    // Every 4-tuple over 0..9 with one index in each floored quarter
    // [⌊9i/4⌋, ⌊9(i+1)/4⌋), found by brute force.
    let mut admissible = BTreeSet::new();
    for a in 0..9usize {
        for b in 0..9usize {
            for c in 0..9usize {
                for d in 0..9usize {
                    let t = [a, b, c, d];
                    if t.iter().enumerate().all(|(i, &x)| x >= 9 * i / 4 && x < 9 * (i + 1) / 4) {
                        admissible.insert(t.to_vec());
                    }
                }
            }
        }
    }
    let (lowest, highest) = (admissible.first().cloned(), admissible.last().cloned());
    if lowest != Some(vec![0, 2, 4, 6]) || highest != Some(vec![1, 3, 5, 8]) {
        problems.push(format!("(9,4) brute force spans {lowest:?}..{highest:?}"));
    }
    let mut rng = stream_raw(4, 9);
    let drawn: BTreeSet<Vec<usize>> = (0..10_000).map(|_| tsn_sample_indices(9, 4, &mut rng).unwrap()).collect();
    if drawn != admissible {
        problems.push(format!("(9,4): drew {} distinct tuples, {} admissible", drawn.len(), admissible.len()));
    }
    let detail = if problems.is_empty() {
        format!("10,000 draws per shape; (9,4) realizes all {} admissible tuples and nothing else", admissible.len())
    } else {
        problems.join("; ")
    };
    verdict(problems.is_empty(), detail)
}

/// Outcome of one training run on the default task.
struct Run {
    top1: f64,
    history: Vec<EpochMetrics>,
    pseudo: Option<PseudoLabelQuality>,
    elapsed: Duration,
}

type Key = (Variant, u64, &'static str);

struct Experiments {
    runs: BTreeMap<Key, Run>,
    classes: usize,
    threshold: f64,
}

impl Experiments {
    fn run_all(base: &ExperimentConfig, plan: &[(&'static str, f64, Vec<Variant>, Vec<u64>)]) -> Self {
        let mut runs = BTreeMap::new();
        for (rho_name, rho, variants, seeds) in plan {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.data.rho = *rho;
                let data = PreparedData::build(&cfg).expect("data");
                for &v in variants {
                    let t = Instant::now();
                    let c = v.apply(&cfg);
                    let r = run_pipeline_on(&c, &data, &RunOptions::default()).expect("training run");
                    let elapsed = t.elapsed();
                    eprintln!("  trained {} seed {seed} rho {rho_name}: top1 {:.4} ({elapsed:.1?})", v.name(), r.report.accuracy.top1);
                    runs.insert(
                        (v, seed, *rho_name),
                        Run {
                            top1: r.report.accuracy.top1,
                            history: r.state.history,
                            pseudo: r.report.pseudo_labels,
                            elapsed,
                        },
                    );
                }
            }
        }
        Self {
            runs,
            classes: base.data.classes,
            threshold: base.finetune.threshold,
        }
    }

    fn get(&self, v: Variant, seed: u64, rho: &'static str) -> &Run {
        &self.runs[&(v, seed, rho)]
    }

    fn mean(&self, v: Variant, seeds: &[u64], rho: &'static str) -> (f64, f64) {
        let xs: Vec<f64> = seeds.iter().map(|&s| self.get(v, s, rho).top1).collect();
        mean_std(&xs).unwrap()
    }
}

const THREE: [u64; 3] = [0, 1, 2];
const FIVE: [u64; 5] = [0, 1, 2, 3, 4];

fn semi_supervised_gain(e: &Experiments) -> Verdict {
    let (tcl, tcl_sd) = e.mean(Variant::Tcl, &THREE, "1");
    let (sup, sup_sd) = e.mean(Variant::Supervised, &THREE, "1");
    let time: Duration = THREE
        .iter()
        .flat_map(|&s| [e.get(Variant::Tcl, s, "1").elapsed, e.get(Variant::Supervised, s, "1").elapsed])
        .sum();
    verdict(
        tcl - sup >= 0.05 && time < Duration::from_secs(15 * 60),
        format!(
            "TCL {tcl:.4}±{tcl_sd:.4} vs supervised {sup:.4}±{sup_sd:.4}, gain {:+.1} points, {time:.0?} of training",
            100.0 * (tcl - sup)
        ),
    )
}

fn ablation(e: &Experiments) -> Verdict {
    let (tcl, tcl_sd) = e.mean(Variant::Tcl, &FIVE, "1");
    let (ng, ng_sd) = e.mean(Variant::TclNoGroup, &FIVE, "1");
    verdict(
        tcl >= ng,
        format!("5 seeds: TCL {tcl:.4}±{tcl_sd:.4}, without group loss {ng:.4}±{ng_sd:.4}, gap {:+.2} points", 100.0 * (tcl - ng)),
    )
}

fn pseudo_label_trend(e: &Experiments) -> Verdict {
    let chance = 1.0 / e.classes as f64;
    let mut rising = 0;
    let mut parts = Vec::new();
    let mut final_ok = true;
    for &seed in &THREE {
        let run = e.get(Variant::Tcl, seed, "1");
        let combined: Vec<&EpochMetrics> = run.history.iter().filter(|m| m.stage == Stage::Combined).collect();
        let n = combined.len();
        let at = |frac: f64| combined[((frac * n as f64).ceil() as usize).max(1) - 1].pl_acc.unwrap();
        let (a, b, c) = (at(0.25), at(0.5), at(1.0));
        rising += usize::from(a <= b && b <= c);
        let conf = run.history.last().and_then(|m| m.pl_acc_confident);
        final_ok &= conf.is_some_and(|x| x >= 3.0 * chance);
        parts.push(format!(
            "seed {seed}: {a:.3}/{b:.3}/{c:.3}, >{} {}",
            e.threshold,
            conf.map_or("none admitted".into(), |x| format!("{x:.3}"))
        ));
    }
    verdict(
        rising >= 2 && final_ok,
        format!("{rising}/3 non-decreasing at 25/50/100% of combined, need >= {:.3} above threshold; {}", 3.0 * chance, parts.join("; ")),
    )
}

fn domain_shift(e: &Experiments) -> Verdict {
    let mut pass = true;
    let mut cells = Vec::new();
    for rho in ["1", "0.5", "0"] {
        let (t, _) = e.mean(Variant::Tcl, &THREE, rho);
        let (s, _) = e.mean(Variant::Supervised, &THREE, rho);
        pass &= t > s;
        cells.push(format!("rho={rho} TCL {t:.4} vs supervised {s:.4}"));
    }
    let gap = e.mean(Variant::Tcl, &THREE, "0").0 - e.mean(Variant::Tcl, &THREE, "1").0;
    verdict(pass, format!("{}; TCL rho=0 minus rho=1 {:+.2} points", cells.join(", "), 100.0 * gap))
}

fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    c.data.classes = 4;
    c.data.train_videos = 64;
    c.data.test_videos = 16;
    c.data.label_percent = 25.0;
    c.data.height = 8;
    c.data.width = 8;
    c.data.frames = 16;
    c.encoder.hidden = vec![8];
    c.batch.labeled = 4;
    c.batch.mu = 2;
    c.schedule = StageSchedule {
        pretrain: 1,
        warmup: 1,
        combined: 2,
        finetune: 1,
        scale: 1.0,
    };
    c.finetune.threshold = 0.3;
    c
}

fn determinism() -> Verdict {
    let mut problems = Vec::new();
    for seed in [0, 7] {
        let cfg = tiny_config(seed);
        let outputs = |_: u8| {
            let data = PreparedData::build(&cfg).unwrap();
            let r = run_pipeline_on(&cfg, &data, &RunOptions::default()).unwrap();
            (
                metrics_csv(&r.state.history).unwrap(),
                json_pretty(&r.report).unwrap(),
                json_pretty(&r.summary(&cfg)).unwrap(),
            )
        };
        if outputs(0) != outputs(1) {
            problems.push(format!("train seed {seed} differs"));
        }
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let spec = GridSpec {
        variants: vec![Variant::Supervised, Variant::Tcl],
        label_percents: vec![25.0],
        rhos: vec![1.0, 0.0],
        seeds: vec![0, 1],
    };
    for d in &dirs {
        run_grid(&tiny_config(0), &spec, Some(d.path())).unwrap();
    }
    let mut files = 0;
    for entry in walk(dirs[0].path()) {
        let rel = entry.strip_prefix(dirs[0].path()).unwrap();
        files += 1;
        if std::fs::read(&entry).unwrap() != std::fs::read(dirs[1].path().join(rel)).unwrap_or_default() {
            problems.push(format!("grid file {} differs", rel.display()));
        }
    }
    let detail = if problems.is_empty() {
        format!("2 train seeds x 2 invocations and 2 grid invocations ({files} files) byte-identical")
    } else {
        problems.join("; ")
    };
    verdict(problems.is_empty(), detail)
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: Verdict| {
        println!("[{}] {n:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "kernel closed forms", kernel_closed_forms());
    report(3, "invariance suite", invariance_suite());
    report(4, "singleton-group oracle", singleton_groups());
    report(5, "TSN sampling", tsn_sampling());

    eprintln!("training on the default synthetic task (27 runs)...");
    let base = ExperimentConfig::default();
    let sup_tcl = vec![Variant::Supervised, Variant::Tcl];
    let e = Experiments::run_all(
        &base,
        &[
            ("1", 1.0, vec![Variant::Supervised, Variant::TclNoGroup, Variant::Tcl], THREE.to_vec()),
            ("1", 1.0, vec![Variant::TclNoGroup, Variant::Tcl], vec![3, 4]),
            ("0.5", 0.5, sup_tcl.clone(), THREE.to_vec()),
            ("0", 0.0, sup_tcl, THREE.to_vec()),
        ],
    );
    report(6, "semi-supervised gain", semi_supervised_gain(&e));
    report(7, "group-loss ablation", ablation(&e));
    report(8, "pseudo-label trend", pseudo_label_trend(&e));
    report(9, "domain-shift robustness", domain_shift(&e));
    report(10, "determinism", determinism());

    for &seed in &THREE {
        if let Some(q) = &e.get(Variant::Tcl, seed, "1").pseudo {
            let (a0, a8) = (q.at(0.0).and_then(|t| t.accuracy), q.at(0.8).and_then(|t| t.accuracy));
            println!("       note: TCL seed {seed} pseudo-label accuracy at 0.0 {a0:?}, above 0.8 {a8:?}");
        }
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    println!(
        "{}/{} criteria passed in {:.0?}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
