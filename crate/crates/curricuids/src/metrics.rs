//! Confusion-matrix metrics and the scoring interface shared by the
//! network, the compressed model, and the ensemble.

use serde::{Deserialize, Serialize};

use crate::data::window::SequenceBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub threshold: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined_precision: bool,
    pub undefined_recall: bool,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

/// Standard confusion-matrix metrics at a decision threshold; probabilities
/// at or above the threshold predict the attack class.
pub fn compute_metrics(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            probs: probabilities.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &y) in probabilities.iter().zip(labels) {
        let predicted = p >= threshold;
        match (predicted, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let undefined_precision = tp + fp == 0;
    let undefined_recall = tp + fn_ == 0;
    let precision = if undefined_precision {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if undefined_recall {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let n = probabilities.len() as f64;
    let accuracy = if n == 0.0 {
        0.0
    } else {
        (tp + tn) as f64 / n
    };
    Ok(MetricsReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision,
        recall,
        f1,
        accuracy,
        threshold,
        undefined_precision,
        undefined_recall,
    })
}

/// Anything that maps windows to attack probabilities.
pub trait ProbabilityScorer {
    fn score_batch(&self, batch: &SequenceBatch) -> Result<Vec<f64>>;

    /// Original feature indices this scorer consumes (callers select these
    /// columns from full-width windows before scoring).
    fn active_features(&self) -> Vec<usize>;
}

impl ProbabilityScorer for crate::model::IdsModel<f64> {
    fn score_batch(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        self.forward(batch)
    }

    fn active_features(&self) -> Vec<usize> {
        self.active_features.clone()
    }
}

/// Score a test batch and compute metrics; deterministic.
pub fn evaluate_model(
    scorer: &dyn ProbabilityScorer,
    test: &SequenceBatch,
    threshold: f64,
) -> Result<MetricsReport> {
    let probs = scorer.score_batch(test)?;
    compute_metrics(&probs, &test.labels, threshold)
}
