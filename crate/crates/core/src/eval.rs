//! Delay-adjusted precision, recall and F1.
//!
//! A ground-truth anomaly segment `[s, e]` counts as detected, in full, when
//! some prediction fires in `[s, min(e, s + k)]`. Otherwise every prediction
//! inside the segment is discarded. Predictions outside segments are scored
//! point-wise.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::extract_segments;

/// Delay used for both benchmark datasets.
pub const DEFAULT_DELAY: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("truth has {truth} points but predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub k: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub adjusted_predictions: Vec<u8>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "k": self.k,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn_,
        })
        .to_string()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10}", "metric", "value")?;
        writeln!(f, "{:<10} {:>10}", "k", self.k)?;
        writeln!(f, "{:<10} {:>10}", "tp", self.tp)?;
        writeln!(f, "{:<10} {:>10}", "fp", self.fp)?;
        writeln!(f, "{:<10} {:>10}", "fn", self.fn_)?;
        writeln!(f, "{:<10} {:>10.4}", "precision", self.precision)?;
        writeln!(f, "{:<10} {:>10.4}", "recall", self.recall)?;
        write!(f, "{:<10} {:>10.4}", "f1", self.f1)
    }
}

pub fn adjust_predictions(truth: &[u8], pred: &[u8], k: usize) -> Result<Vec<u8>, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut adjusted = pred.to_vec();
    for &(start, end) in extract_segments(truth).iter() {
        let window_end = end.min(start.saturating_add(k));
        let hit = pred[start..=window_end].contains(&1);
        adjusted[start..=end].fill(u8::from(hit));
    }
    Ok(adjusted)
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(truth: &[u8], pred: &[u8], k: usize) -> Result<EvalReport, EvalError> {
    let adjusted = adjust_predictions(truth, pred, k)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&t, &p) in truth.iter().zip(&adjusted) {
        match (t == 1, p == 1) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(EvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        k,
        tp,
        fp,
        fn_,
        adjusted_predictions: adjusted,
    })
}
