use serde::Serialize;

use crate::error::{Error, Result};

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Confusion counts and the metrics derived from them. Precision and recall
/// are reported as 0 when undefined, with the matching flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::Data("no samples to evaluate".into()));
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(MetricsReport {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / n as f64,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
        })
    }

    /// Scores binary decisions against binary labels.
    pub fn from_decisions(labels: &[u8], decisions: &[u8]) -> Result<Self> {
        if labels.len() != decisions.len() {
            return Err(Error::shape(format!(
                "{} labels but {} decisions",
                labels.len(),
                decisions.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&y, &d) in labels.iter().zip(decisions) {
            match (y, d) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (0, 0) => tn += 1,
                (1, 0) => fn_ += 1,
                _ => return Err(Error::Validation(format!("non-binary pair ({y}, {d})"))),
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    /// Thresholds probabilities at [`DECISION_THRESHOLD`] (inclusive).
    pub fn from_probabilities(labels: &[u8], probs: &[f32]) -> Result<Self> {
        let decisions: Vec<u8> = probs
            .iter()
            .map(|&p| (p as f64 >= DECISION_THRESHOLD) as u8)
            .collect();
        Self::from_decisions(labels, &decisions)
    }

    pub fn count(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_counts() {
        let m = MetricsReport::from_counts(8, 2, 8, 2).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = MetricsReport::from_decisions(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        let m = MetricsReport::from_decisions(&[0, 0], &[0, 0]).unwrap();
        assert!(m.precision_undefined && m.recall_undefined);
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.0, 0.0, 0.0, 1.0));
        assert!(MetricsReport::from_counts(0, 0, 0, 0).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = MetricsReport::from_probabilities(&[1, 0], &[0.5, 0.4999]).unwrap();
        assert_eq!((m.tp, m.tn), (1, 1));
    }

    proptest! {
        #[test]
        fn identities(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let m = MetricsReport::from_counts(tp, fp, tn, fn_).unwrap();
            prop_assert_eq!(m.count(), tp + fp + tn + fn_);
            prop_assert!((m.accuracy - (tp + tn) as f64 / m.count() as f64).abs() < 1e-12);
            if m.precision + m.recall > 0.0 {
                let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - f1).abs() < 1e-12);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }
    }
}
