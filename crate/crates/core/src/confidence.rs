//! Confidence learning: label confidence, class thresholds, the confidence
//! joint, the normalized joint distribution, and prune-by-noise-rate
//! filtering of the uncertain pool.

use std::fmt::Write as _;

use log::warn;

use crate::error::{Error, Result};
use crate::layers::ProbPair;

/// Which labeling pool a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    TruePositive,
    TrueNegative,
    /// Uncertain pool of the pulse-wave protocol; always labeled negative.
    Uncertain,
    /// Symmetric-noise segment of a public run; either given label occurs.
    Noisy,
}

#[derive(Debug, Clone)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub probs: ProbPair,
    pub given_label: u8,
    pub group: Group,
}

impl SamplePrediction {
    pub fn new(
        sample_id: impl Into<String>,
        probs: ProbPair,
        given_label: u8,
        group: Group,
    ) -> Result<Self> {
        let s = Self {
            sample_id: sample_id.into(),
            probs,
            given_label,
            group,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.given_label > 1 {
            return Err(Error::Confidence(format!(
                "sample {}: label {} out of range",
                self.sample_id, self.given_label
            )));
        }
        let ok = match self.group {
            Group::TruePositive => self.given_label == 1,
            Group::TrueNegative | Group::Uncertain => self.given_label == 0,
            Group::Noisy => true,
        };
        if !ok {
            return Err(Error::Confidence(format!(
                "sample {}: group {:?} inconsistent with label {}",
                self.sample_id, self.group, self.given_label
            )));
        }
        Ok(())
    }

    /// Positive-vs-given margin: probability mass on the opposite of the
    /// given label minus the mass on the given label. For an uncertain
    /// (negative-labeled) sample this is p[1] - p[0].
    pub fn margin(&self) -> f64 {
        self.probs.p[1 - self.given_label as usize] - self.probs.p[self.given_label as usize]
    }
}

/// Probability assigned to the sample's given label.
pub fn label_confidence(pred: &SamplePrediction) -> f64 {
    pred.probs.p[pred.given_label as usize]
}

/// Per-class mean label confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassThresholds {
    pub t0: f64,
    pub t1: f64,
}

impl ClassThresholds {
    pub fn for_class(&self, c: u8) -> f64 {
        if c == 0 {
            self.t0
        } else {
            self.t1
        }
    }
}

/// Mean label confidence per class over the given predictions (callers pass
/// the reliably labeled pool only).
pub fn class_thresholds(preds: &[SamplePrediction]) -> Result<ClassThresholds> {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for p in preds {
        let c = p.given_label as usize;
        sums[c] += label_confidence(p);
        counts[c] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Confidence(format!(
            "class thresholds need both classes; got {} negatives, {} positives",
            counts[0], counts[1]
        )));
    }
    Ok(ClassThresholds {
        t0: sums[0] / counts[0] as f64,
        t1: sums[1] / counts[1] as f64,
    })
}

/// The estimated label: classes whose probability clears their threshold
/// compete by probability (ties to negative); no qualifier means null.
pub fn estimated_label(pred: &SamplePrediction, t: &ClassThresholds) -> Option<u8> {
    let q0 = pred.probs.p[0] >= t.t0;
    let q1 = pred.probs.p[1] >= t.t1;
    match (q0, q1) {
        (false, false) => None,
        (true, false) => Some(0),
        (false, true) => Some(1),
        (true, true) => {
            if pred.probs.p[0] >= pred.probs.p[1] {
                Some(0)
            } else {
                Some(1)
            }
        }
    }
}

/// Count matrix C[i][j] = #{given label i, estimated label j}; null
/// estimates are counted nowhere.
pub fn confidence_joint(preds: &[SamplePrediction], t: &ClassThresholds) -> [[usize; 2]; 2] {
    let mut c = [[0usize; 2]; 2];
    for p in preds {
        if let Some(est) = estimated_label(p, t) {
            c[p.given_label as usize][est as usize] += 1;
        }
    }
    c
}

/// Row-normalizes C, rescales row i by the class size X_i, then normalizes
/// the whole matrix to total mass 1.
pub fn joint_distribution(c: &[[usize; 2]; 2], x0: f64, x1: f64) -> Result<[[f64; 2]; 2]> {
    let x = [x0, x1];
    let mut scaled = [[0.0f64; 2]; 2];
    for i in 0..2 {
        let row_sum = (c[i][0] + c[i][1]) as f64;
        if row_sum == 0.0 {
            if x[i] > 0.0 {
                warn!(
                    "confidence joint row {i} is empty although class size is {}; \
                     row contributes zero mass",
                    x[i]
                );
            }
            continue;
        }
        for j in 0..2 {
            scaled[i][j] = c[i][j] as f64 / row_sum * x[i];
        }
    }
    let total: f64 = scaled.iter().flatten().sum();
    if total <= 0.0 {
        return Err(Error::Confidence(
            "joint distribution has zero total mass (no estimated labels)".into(),
        ));
    }
    let mut q = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            q[i][j] = scaled[i][j] / total;
        }
    }
    Ok(q)
}

/// Half-away-from-zero rounding of a non-negative count estimate.
pub fn round_count(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone)]
pub struct NoiseFilterResult {
    pub removed_ids: Vec<String>,
    pub n_noise: usize,
    /// Per-candidate (id, margin, label confidence), in removal order first,
    /// then the retained candidates.
    pub margins: Vec<(String, f64, f64)>,
}

fn rank_by_margin(preds: &[SamplePrediction]) -> Vec<&SamplePrediction> {
    let mut order: Vec<&SamplePrediction> = preds.iter().collect();
    order.sort_by(|a, b| {
        b.margin()
            .partial_cmp(&a.margin())
            .expect("finite margins")
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    order
}

fn filter_top(preds: &[SamplePrediction], mut n_noise: usize, what: &str) -> NoiseFilterResult {
    if n_noise > preds.len() {
        warn!(
            "{what}: noise estimate {n_noise} exceeds pool size {}; clamping",
            preds.len()
        );
        n_noise = preds.len();
    }
    let order = rank_by_margin(preds);
    let removed_ids: Vec<String> = order[..n_noise]
        .iter()
        .map(|p| p.sample_id.clone())
        .collect();
    let margins = order
        .iter()
        .map(|p| (p.sample_id.clone(), p.margin(), label_confidence(p)))
        .collect();
    NoiseFilterResult {
        removed_ids,
        n_noise,
        margins,
    }
}

/// Prune-by-noise-rate over an all-negative uncertain pool: remove
/// round(|UN| * Q[0][1]) samples with the largest positive margin.
pub fn pbnr_filter(un_preds: &[SamplePrediction], q: &[[f64; 2]; 2]) -> NoiseFilterResult {
    let n_noise = round_count(un_preds.len() as f64 * q[0][1]);
    filter_top(un_preds, n_noise, "pbnr")
}

/// Prune-by-noise-rate for a symmetric-noise pool whose given labels span
/// both classes: the off-diagonal mass on both sides drives the count, and
/// candidates rank by the margin against their own given label.
pub fn pbnr_filter_symmetric(
    noisy_preds: &[SamplePrediction],
    q: &[[f64; 2]; 2],
) -> NoiseFilterResult {
    let n_noise = round_count(noisy_preds.len() as f64 * (q[0][1] + q[1][0]));
    filter_top(noisy_preds, n_noise, "pbnr-symmetric")
}

/// Renders the noise report consumed by the second stage and by auditors:
/// the count matrix, the joint distribution, and one line per removed
/// sample.
pub fn render_noise_report(
    c: &[[usize; 2]; 2],
    q: &[[f64; 2]; 2],
    result: &NoiseFilterResult,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "confidence_joint_counts:");
    for row in c {
        let _ = writeln!(out, "  {} {}", row[0], row[1]);
    }
    let _ = writeln!(out, "joint_distribution:");
    for row in q {
        let _ = writeln!(out, "  {} {}", row[0], row[1]);
    }
    let _ = writeln!(out, "n_noise: {}", result.n_noise);
    let _ = writeln!(out, "removed: id margin label_confidence");
    for (id, margin, conf) in result.margins.iter().take(result.n_noise) {
        let _ = writeln!(out, "  {id} {margin} {conf}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, p0: f64, given: u8, group: Group) -> SamplePrediction {
        SamplePrediction::new(id, ProbPair::new([p0, 1.0 - p0]), given, group).unwrap()
    }

    fn tn(id: &str, p0: f64) -> SamplePrediction {
        pred(id, p0, 0, Group::TrueNegative)
    }

    fn tp(id: &str, p0: f64) -> SamplePrediction {
        pred(id, p0, 1, Group::TruePositive)
    }

    fn un(id: &str, p0: f64) -> SamplePrediction {
        pred(id, p0, 0, Group::Uncertain)
    }

    #[test]
    fn label_confidence_cases() {
        assert_eq!(label_confidence(&tn("a", 0.8)), 0.8);
        assert!((label_confidence(&tp("b", 0.8)) - 0.2).abs() < 1e-12);
        assert_eq!(label_confidence(&tn("c", 0.5)), 0.5);
        assert_eq!(label_confidence(&tp("d", 0.5)), 0.5);
    }

    #[test]
    fn group_label_consistency_enforced() {
        assert!(
            SamplePrediction::new("x", ProbPair::new([0.5, 0.5]), 0, Group::TruePositive).is_err()
        );
        assert!(
            SamplePrediction::new("x", ProbPair::new([0.5, 0.5]), 1, Group::Uncertain).is_err()
        );
    }

    #[test]
    fn thresholds_are_class_means() {
        let t = class_thresholds(&[tn("a", 0.6), tn("b", 0.8), tp("c", 0.1)]).unwrap();
        assert!((t.t0 - 0.7).abs() < 1e-12);
        assert!((t.t1 - 0.9).abs() < 1e-12);

        let t = class_thresholds(&[tn("a", 0.4), tp("b", 0.6)]).unwrap();
        assert_eq!(t.t0, t.t1);
        assert!((t.t0 - 0.4).abs() < 1e-12);

        assert!(class_thresholds(&[tn("a", 0.6)]).is_err());
    }

    #[test]
    fn estimated_label_rules() {
        let t = ClassThresholds { t0: 0.7, t1: 0.7 };
        assert_eq!(estimated_label(&un("a", 0.9), &t), Some(0));

        // Neither class qualifies.
        let t = ClassThresholds { t0: 0.7, t1: 0.5 };
        assert_eq!(estimated_label(&un("b", 0.6), &t), None);

        // Both qualify; argmax wins.
        let t = ClassThresholds { t0: 0.5, t1: 0.4 };
        assert_eq!(estimated_label(&un("c", 0.55), &t), Some(0));

        // Exact tie with both above threshold resolves to negative.
        let t = ClassThresholds { t0: 0.4, t1: 0.4 };
        assert_eq!(estimated_label(&un("d", 0.5), &t), Some(0));
    }

    #[test]
    fn confidence_joint_cases() {
        // Perfectly confident, correct predictions (equal confidence per
        // class so everyone clears the mean threshold): diagonal counts.
        let preds = vec![tn("a", 0.99), tn("b", 0.99), tp("c", 0.01), tp("d", 0.01)];
        let t = class_thresholds(&preds).unwrap();
        let c = confidence_joint(&preds, &t);
        assert_eq!(c[0][0], 2);
        assert_eq!(c[1][1], 2);
        assert_eq!(c[0][1] + c[1][0], 0);

        // Thresholds nobody clears: all null, C all zero.
        let t = ClassThresholds { t0: 2.0, t1: 2.0 };
        let c = confidence_joint(&preds, &t);
        assert_eq!(c, [[0usize; 2]; 2]);
    }

    #[test]
    fn confidence_joint_flipped_tn_matches_brute_force() {
        // One TN looks confidently positive.
        let preds = vec![tn("a", 0.9), tn("b", 0.05), tp("c", 0.1), tp("d", 0.2)];
        let t = class_thresholds(&preds).unwrap();
        let c = confidence_joint(&preds, &t);
        // Brute-force re-application of the rule.
        let mut expect = [[0usize; 2]; 2];
        for p in &preds {
            let q0 = p.probs.p[0] >= t.t0;
            let q1 = p.probs.p[1] >= t.t1;
            let est = match (q0, q1) {
                (false, false) => None,
                (true, false) => Some(0),
                (false, true) => Some(1),
                (true, true) => Some(if p.probs.p[0] >= p.probs.p[1] { 0 } else { 1 }),
            };
            if let Some(e) = est {
                expect[p.given_label as usize][e as usize] += 1;
            }
        }
        assert_eq!(c, expect);
        assert_eq!(c[0][1], 1, "the flipped TN lands in C[0][1]");
    }

    #[test]
    fn joint_distribution_worked_examples() {
        let q = joint_distribution(&[[10, 0], [0, 10]], 10.0, 10.0).unwrap();
        assert_eq!(q, [[0.5, 0.0], [0.0, 0.5]]);

        let q = joint_distribution(&[[8, 2], [0, 10]], 21.0, 21.0).unwrap();
        assert!((q[0][0] - 0.4).abs() < 1e-12);
        assert!((q[0][1] - 0.1).abs() < 1e-12);
        assert!((q[1][0]).abs() < 1e-12);
        assert!((q[1][1] - 0.5).abs() < 1e-12);

        // Homogeneous in the class sizes.
        let q10 = joint_distribution(&[[8, 2], [0, 10]], 210.0, 210.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((q[i][j] - q10[i][j]).abs() < 1e-12);
            }
        }

        let total: f64 = q.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn joint_distribution_zero_row() {
        let q = joint_distribution(&[[0, 0], [2, 8]], 10.0, 10.0).unwrap();
        assert_eq!(q[0], [0.0, 0.0]);
        assert!((q[1][0] - 0.2).abs() < 1e-12);
        assert!((q[1][1] - 0.8).abs() < 1e-12);
        assert!(joint_distribution(&[[0, 0], [0, 0]], 10.0, 10.0).is_err());
    }

    #[test]
    fn pbnr_counts() {
        // 2000 candidates at Q01 = 0.05 removes exactly 100.
        let preds: Vec<SamplePrediction> = (0..2000)
            .map(|i| un(&format!("u{i:04}"), 0.5 + (i % 7) as f64 * 0.01))
            .collect();
        let q = [[0.45, 0.05], [0.0, 0.5]];
        let res = pbnr_filter(&preds, &q);
        assert_eq!(res.n_noise, 100);
        assert_eq!(res.removed_ids.len(), 100);

        // Zero off-diagonal mass removes nothing.
        let res = pbnr_filter(&preds, &[[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(res.n_noise, 0);
        assert!(res.removed_ids.is_empty());
    }

    #[test]
    fn pbnr_takes_largest_margins() {
        // Margins p1 - p0: [-0.8, -0.2, 0.1, 0.4, 0.3]; removing 2 takes 0.4 and 0.3.
        let p0s = [0.9, 0.6, 0.45, 0.3, 0.35];
        let preds: Vec<SamplePrediction> = p0s
            .iter()
            .enumerate()
            .map(|(i, &p0)| un(&format!("u{i}"), p0))
            .collect();
        // Choose Q so that round(5 * q01) = 2.
        let q = [[0.2, 0.4], [0.0, 0.4]];
        let res = pbnr_filter(&preds, &q);
        assert_eq!(res.n_noise, 2);
        assert_eq!(res.removed_ids, vec!["u3".to_string(), "u4".to_string()]);
        // Every removed confidence <= every retained confidence.
        let removed_conf: Vec<f64> = res.margins[..2].iter().map(|m| m.2).collect();
        let kept_conf: Vec<f64> = res.margins[2..].iter().map(|m| m.2).collect();
        for r in &removed_conf {
            for k in &kept_conf {
                assert!(r <= k);
            }
        }
    }

    #[test]
    fn pbnr_clamps_to_pool() {
        let preds = vec![un("a", 0.4), un("b", 0.3)];
        let res = pbnr_filter(&preds, &[[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(res.n_noise, 2);
    }

    #[test]
    fn margin_ties_break_by_id() {
        let preds = vec![un("b", 0.4), un("a", 0.4), un("c", 0.4)];
        let q = [[0.4, 0.35], [0.0, 0.25]]; // round(3 * 0.35) = 1
        let res = pbnr_filter(&preds, &q);
        assert_eq!(res.removed_ids, vec!["a".to_string()]);
    }

    #[test]
    fn round_count_half_away() {
        assert_eq!(round_count(0.0), 0);
        assert_eq!(round_count(0.4999), 0);
        assert_eq!(round_count(0.5), 1);
        assert_eq!(round_count(2.5), 3);
        assert_eq!(round_count(2.49), 2);
    }
}
