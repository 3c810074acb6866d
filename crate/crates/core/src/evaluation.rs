//! Confusion counts and accuracy, precision and recall for the lane-change class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::Label;
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Change, Label::Change) => self.tp += 1,
            (Label::Change, Label::Keep) => self.fp += 1,
            (Label::Keep, Label::Keep) => self.tn += 1,
            (Label::Keep, Label::Change) => self.fn_ += 1,
        }
    }
}

/// A probability at or above `threshold` predicts a lane change.
pub fn confusion<T: Scalar>(probabilities: &[T], labels: &[Label], threshold: T) -> Result<ConfusionCounts> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch { left: probabilities.len(), right: labels.len() });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        c.add(Label::from_bool(p >= threshold), y);
    }
    Ok(c)
}

/// Metrics with `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(counts: &ConfusionCounts) -> MetricsReport {
    let c = *counts;
    MetricsReport {
        counts: c,
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    }
}

/// `0.5915` → `"59.15"`, `None` → `"n/a"`.
pub fn format_percent(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", v * 100.0))
}

/// `0.5915` → `"0.591500"`, `None` → `"n/a"`.
pub fn format_fraction(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl fmt::Display for MetricsReport {
    /// `accuracy / precision / recall` in percent.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} / {}",
            format_percent(self.accuracy),
            format_percent(self.precision),
            format_percent(self.recall)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_threshold_boundary() {
        let probs = [0.9, 0.5, 0.49, 0.1, 0.7];
        let labels = [Label::Change, Label::Keep, Label::Change, Label::Keep, Label::Change];
        let c = confusion(&probs, &labels, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, tn: 1, fn_: 1 });
        let m = metrics(&c);
        assert_eq!(m.accuracy, Some(0.6));
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, Some(2.0 / 3.0));
    }

    #[test]
    fn undefined_metrics() {
        let c = confusion(&[0.1f64, 0.2], &[Label::Keep, Label::Keep], 0.5).unwrap();
        let m = metrics(&c);
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.to_string(), "100.00 / n/a / n/a");
        assert_eq!(metrics(&ConfusionCounts::default()).accuracy, None);
    }

    #[test]
    fn display_rounds_to_two_places() {
        let m = MetricsReport {
            counts: ConfusionCounts::default(),
            accuracy: Some(0.591_5),
            precision: Some(0.785_4),
            recall: Some(0.284_3),
        };
        assert_eq!(m.to_string(), "59.15 / 78.54 / 28.43");
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion(&[0.1f64], &[], 0.5), Err(Error::LengthMismatch { left: 1, right: 0 })));
    }

    #[test]
    fn serialized_key_is_fn() {
        let s = serde_json::to_string(&ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4 }).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }
}
