use proptest::prelude::*;
use tcl_core::encoder::predict_logits;
use tcl_core::gradcheck::{check_graph_fn, run_op_suite, DEFAULT_STEP, TOLERANCE};
use tcl_core::losses::{cosine_logits, instance_contrastive_loss, supervised_loss, SimilarityConfig};
use tcl_core::{Graph, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_passes_finite_differences(seed in any::<u64>()) {
        for c in run_op_suite(seed, DEFAULT_STEP).unwrap() {
            prop_assert!(c.rel_error < TOLERANCE, "{} rel error {}", c.op, c.rel_error);
        }
    }

    #[test]
    fn kernel_gradient_in_u(u in prop::collection::vec(-2.0f64..2.0, 8)) {
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 0.1);
        let v = Tensor::matrix(1, 8, vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5, 0.0, -0.3]).unwrap();
        let x = Tensor::matrix(1, 8, u).unwrap();
        let check = check_graph_fn(
            |g, xv| {
                let vv = g.constant(v.clone());
                let z = g.concat(&[xv, vv])?;
                let s = cosine_logits(g, z, &SimilarityConfig::default())?;
                let e = g.exp(s)?;
                g.gather(e, vec![1], vec![])
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        prop_assert!(check.rel_error < TOLERANCE, "{}", check.rel_error);
    }

    #[test]
    fn backward_is_linear_and_reproducible(
        data in prop::collection::vec(-2.0f64..2.0, 12),
        labels in prop::collection::vec(0usize..3, 2),
    ) {
        let x = Tensor::matrix(4, 3, data).unwrap();
        let grad = |which: u8| {
            let mut g = Graph::new();
            let p = g.param(x.clone());
            let fast = g.slice_rows(p, 0, 2).unwrap();
            let slow = g.slice_rows(p, 2, 4).unwrap();
            let sup = supervised_loss(&mut g, fast, &labels).unwrap();
            let ic = instance_contrastive_loss(&mut g, fast, slow, &SimilarityConfig::default()).unwrap();
            let loss = match which {
                0 => sup,
                1 => ic,
                _ => g.add(sup, ic).unwrap(),
            };
            g.backward(loss).unwrap().get_or_zeros(p, &[4, 3])
        };
        let (a, b, sum) = (grad(0), grad(1), grad(2));
        for i in 0..12 {
            prop_assert!((sum.data()[i] - a.data()[i] - b.data()[i]).abs() < 1e-12);
        }
        let again = grad(2);
        prop_assert!(sum.data().iter().zip(again.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn scaling_logits_keeps_class_and_raises_confidence(
        logits in prop::collection::vec(-3.0f64..3.0, 5),
        c in 1.01f64..5.0,
    ) {
        let (k, p) = predict_logits(&logits);
        let scaled: Vec<f64> = logits.iter().map(|v| v * c).collect();
        let (k2, p2) = predict_logits(&scaled);
        prop_assert_eq!(k, k2);
        let mut sorted = logits.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted[4] - sorted[3] > 1e-9 {
            prop_assert!(p2 > p, "{p} -> {p2}");
        }
    }
}
