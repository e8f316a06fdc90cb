//! Property tests over the kernel, confidence-learning, and preprocessing
//! invariants.

use proptest::prelude::*;

use tnanet::confidence::{
    estimated_label, joint_distribution, pbnr_filter, ClassThresholds, Group, SamplePrediction,
};
use tnanet::layers::{avg_pool2d, cross_entropy_loss, depthwise_conv2d, softmax, ProbPair};
use tnanet::model::predict_label;
use tnanet::ppg::segment_windows;
use tnanet::Tensor;

fn un_pred(id: usize, p0: f64) -> SamplePrediction {
    SamplePrediction::new(
        format!("u{id:03}"),
        ProbPair::new([p0, 1.0 - p0]),
        0,
        Group::Uncertain,
    )
    .unwrap()
}

proptest! {
    /// Softmax sums to one within 1e-12 for any finite logit pair.
    #[test]
    fn softmax_normalizes(z0 in -1000.0f64..1000.0, z1 in -1000.0f64..1000.0) {
        let p = softmax(&[z0, z1]);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
    }

    /// Cross entropy equals -log(softmax[y]) within 1e-10 for |z| <= 50.
    #[test]
    fn cross_entropy_matches_log_softmax(
        z0 in -50.0f64..50.0,
        z1 in -50.0f64..50.0,
        y in 0u8..2,
    ) {
        let z = Tensor::from_vec(vec![z0, z1]);
        let direct = cross_entropy_loss(&z, y);
        let p = softmax(&[z0, z1]);
        prop_assert!(direct >= 0.0);
        prop_assert!((direct + p[y as usize].ln()).abs() <= 1e-10);
    }

    /// Pooling a constant tensor returns that constant.
    #[test]
    fn avg_pool_of_constant_is_constant(
        c in 1usize..5,
        l in 1usize..40,
        pool in 1usize..8,
        value in -100.0f64..100.0,
    ) {
        prop_assume!(l >= pool);
        let x = Tensor::filled(vec![c, 1, l], value);
        let out = avg_pool2d(&x, pool).unwrap();
        prop_assert_eq!(out.shape()[2], l / pool);
        for v in out.data() {
            prop_assert!((v - value).abs() < 1e-12);
        }
    }

    /// The channel-collapsing convolution is linear in its input.
    #[test]
    fn depthwise_linearity(
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut rng = tnanet::rng::seeded_rng(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| tnanet::rng::uniform(&mut rng, -1.0, 1.0)).collect()
        };
        let (d, l, f) = (3usize, 6usize, 2usize);
        let x = draw(d * l);
        let y = draw(d * l);
        let w = Tensor::new(vec![f, d, 1], draw(f * d)).unwrap();
        let tens = |v: Vec<f64>| Tensor::new(vec![1, d, l], v).unwrap();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();
        let lhs = depthwise_conv2d(&tens(mixed), &w).unwrap();
        let fx = depthwise_conv2d(&tens(x), &w).unwrap();
        let fy = depthwise_conv2d(&tens(y), &w).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * fx.data()[i] + b * fy.data()[i];
            prop_assert!((lhs.data()[i] - rhs).abs() <= 1e-9);
        }
    }

    /// Predicted labels are invariant under strictly monotone transforms
    /// applied to both probabilities identically.
    #[test]
    fn predict_label_argmax_invariance(p0 in 0.0f64..=1.0) {
        let base = ProbPair::new([p0, 1.0 - p0]);
        let label = predict_label(&base);
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x + 7.0, |x: f64| x.sqrt()] {
            let mapped = ProbPair::new([f(base.p[0]), f(base.p[1])]);
            prop_assert_eq!(predict_label(&mapped), label);
        }
    }

    /// The joint distribution is invariant under scaling the class sizes and
    /// under scaling a row of the count matrix.
    #[test]
    fn joint_distribution_homogeneity(
        c00 in 0usize..30,
        c01 in 0usize..30,
        c10 in 0usize..30,
        c11 in 0usize..30,
        x0 in 1.0f64..50.0,
        x1 in 1.0f64..50.0,
        scale in 1usize..5,
        row_scale in 1usize..5,
    ) {
        let c = [[c00, c01], [c10, c11]];
        prop_assume!(c00 + c01 > 0 || c10 + c11 > 0);
        let base = joint_distribution(&c, x0, x1).unwrap();
        let scaled = joint_distribution(&c, x0 * scale as f64, x1 * scale as f64).unwrap();
        let row_scaled = joint_distribution(
            &[[c00 * row_scale, c01 * row_scale], [c10, c11]],
            x0,
            x1,
        ).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((base[i][j] - scaled[i][j]).abs() <= 1e-12);
                prop_assert!((base[i][j] - row_scaled[i][j]).abs() <= 1e-12);
            }
        }
    }

    /// Raising both thresholds never decreases the number of null estimates.
    #[test]
    fn null_rate_monotone_in_thresholds(
        probs in proptest::collection::vec(0.0f64..=1.0, 1..40),
        t0 in 0.0f64..=1.0,
        t1 in 0.0f64..=1.0,
        bump0 in 0.0f64..0.5,
        bump1 in 0.0f64..0.5,
    ) {
        let preds: Vec<SamplePrediction> =
            probs.iter().enumerate().map(|(i, &p0)| un_pred(i, p0)).collect();
        let low = ClassThresholds { t0, t1 };
        let high = ClassThresholds { t0: t0 + bump0, t1: t1 + bump1 };
        let nulls = |t: &ClassThresholds| {
            preds.iter().filter(|p| estimated_label(p, t).is_none()).count()
        };
        prop_assert!(nulls(&high) >= nulls(&low));
    }

    /// The pruning filter removes exactly the brute-force "sort by margin,
    /// take the first n" set.
    #[test]
    fn pbnr_matches_brute_force(
        probs in proptest::collection::vec(0.0f64..=1.0, 1..40),
        q01 in 0.0f64..=1.0,
    ) {
        let preds: Vec<SamplePrediction> =
            probs.iter().enumerate().map(|(i, &p0)| un_pred(i, p0)).collect();
        let q = [[1.0 - q01, q01], [0.0, 0.0]];
        let result = pbnr_filter(&preds, &q);
        let mut order: Vec<&SamplePrediction> = preds.iter().collect();
        order.sort_by(|a, b| {
            let ma = a.probs.p[1] - a.probs.p[0];
            let mb = b.probs.p[1] - b.probs.p[0];
            mb.partial_cmp(&ma).unwrap().then(a.sample_id.cmp(&b.sample_id))
        });
        let n = ((preds.len() as f64 * q01) + 0.5).floor() as usize;
        let expect: Vec<String> = order[..n.min(preds.len())]
            .iter()
            .map(|p| p.sample_id.clone())
            .collect();
        prop_assert_eq!(result.removed_ids, expect);
        // Every removed label confidence <= every retained one.
        let removed: Vec<f64> = result.margins[..result.n_noise].iter().map(|m| m.2).collect();
        let kept: Vec<f64> = result.margins[result.n_noise..].iter().map(|m| m.2).collect();
        for r in &removed {
            for k in &kept {
                prop_assert!(r <= k);
            }
        }
    }

    /// Window-count formula agrees with exhaustive enumeration.
    #[test]
    fn window_count_formula(len in 2000usize..50_000) {
        let ranges = segment_windows(len, 100.0, 20.0, 0.8, 1).unwrap();
        prop_assert!(!ranges.is_empty());
        let mut count = 0usize;
        let mut start = 0usize;
        while start + 2000 <= len {
            count += 1;
            start += 400;
        }
        prop_assert_eq!((len - 2000) / 400 + 1, count);
    }

    /// Row normalization lands every value in [0, 1] and pins constant rows
    /// to one half.
    #[test]
    fn minmax_rows_bounded(
        rows in proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, 4),
            1..6,
        ),
    ) {
        let d = rows.len();
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut m = tnanet::FeatureMatrix::from_channels(
            Tensor::new(vec![d, 4], data).unwrap(),
        ).unwrap();
        m.minmax_normalize();
        for (di, source) in rows.iter().enumerate() {
            let row = m.row(di);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            let constant = source.windows(2).all(|w| w[0] == w[1]);
            if constant {
                prop_assert!(row.iter().all(|v| *v == 0.5));
            }
        }
    }
}
