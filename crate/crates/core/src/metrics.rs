//! Confusion matrices and the derived class-balanced scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix, rows are truth and columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion_matrix(truths: &[usize], preds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truths.len() != preds.len() {
        return Err(Error::InvalidInput(format!(
            "{} truths but {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= k || p >= k {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) outside [0, {k})"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    /// Mean recall over classes that occur in the truth.
    pub balanced_accuracy: f64,
    /// Plain fraction of correct predictions.
    pub accuracy: f64,
    pub support: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(confusion: &ConfusionMatrix) -> MetricsReport {
    let k = confusion.classes();
    let c = &confusion.counts;
    let per_class: Vec<ClassScores> = (0..k)
        .map(|i| {
            let row: u64 = c[i].iter().sum();
            let col: u64 = (0..k).map(|r| c[r][i]).sum();
            let precision = ratio(c[i][i], col);
            let recall = ratio(c[i][i], row);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: row,
            }
        })
        .collect();
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1).sum::<f64>() / k as f64
    };
    let present: Vec<&ClassScores> = per_class.iter().filter(|s| s.support > 0).collect();
    let balanced_accuracy = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|s| s.recall).sum::<f64>() / present.len() as f64
    };
    let correct: u64 = (0..k).map(|i| c[i][i]).sum();
    MetricsReport {
        confusion: confusion.clone(),
        support: per_class.iter().map(|s| s.support).collect(),
        per_class,
        macro_f1,
        balanced_accuracy,
        accuracy: ratio(correct, confusion.total()),
    }
}

/// Convenience: report straight from label vectors.
pub fn evaluate(truths: &[usize], preds: &[usize], k: usize) -> Result<MetricsReport> {
    Ok(report(&confusion_matrix(truths, preds, k)?))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("bad report JSON: {e}")))
    }
}
