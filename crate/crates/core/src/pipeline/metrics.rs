//! Classification metrics over test predictions.

use log::warn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and positive-class F1 over (predicted, truth) pairs. Empty
/// precision or recall denominators score zero with a warning.
pub fn metrics(pairs: &[(u8, u8)]) -> Metrics {
    assert!(!pairs.is_empty(), "metrics over an empty prediction set");
    let n = pairs.len() as f64;
    let correct = pairs.iter().filter(|(p, t)| p == t).count() as f64;
    let tp = pairs.iter().filter(|(p, t)| *p == 1 && *t == 1).count() as f64;
    let fp = pairs.iter().filter(|(p, t)| *p == 1 && *t == 0).count() as f64;
    let fn_ = pairs.iter().filter(|(p, t)| *p == 0 && *t == 1).count() as f64;
    let precision = if tp + fp == 0.0 {
        warn!("no positive predictions; precision set to 0");
        0.0
    } else {
        tp / (tp + fp)
    };
    let recall = if tp + fn_ == 0.0 {
        warn!("no positive truths; recall set to 0");
        0.0
    } else {
        tp / (tp + fn_)
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy: correct / n,
        f1,
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let m = metrics(&[(0, 0), (1, 1), (1, 1)]);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn all_negative_predictions_on_balanced_truth() {
        let m = metrics(&[(0, 0), (0, 1), (0, 0), (0, 1)]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn hand_counts() {
        // TP = 3, FP = 1, FN = 2 plus one true negative:
        // precision 0.75, recall 0.6, F1 = 2/3.
        let pairs = vec![(1, 1), (1, 1), (1, 1), (1, 0), (0, 1), (0, 1), (0, 0)];
        let m = metrics(&pairs);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 4.0 / 7.0).abs() < 1e-12);
    }
}
