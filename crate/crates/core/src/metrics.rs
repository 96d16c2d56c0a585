//! Threshold-free detection metrics and classification accuracy.
//!
//! Scores follow the detector convention (higher = more OOD). ID examples are
//! the positives for FAR95: an example is accepted as ID when its score is at
//! or below the threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite score")]
    NonFinite,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if id.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// `P(ood > id) + ½·P(ood = id)` via midranks of the pooled sample.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // doubled midranks keep everything in integers
    let mut ood_rank_sum2: u128 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let midrank2 = (start + 1 + end) as u128;
        let n_ood_in_group = pooled[start..end].iter().filter(|p| p.1).count() as u128;
        ood_rank_sum2 += midrank2 * n_ood_in_group;
        start = end;
    }
    let (n_id, n_ood) = (id.len() as u128, ood.len() as u128);
    let u2 = ood_rank_sum2 - n_ood * (n_ood + 1);
    Ok(u2 as f64 / (2 * n_id * n_ood) as f64)
}

/// Fraction of OOD scores accepted at the nearest-rank 95th percentile of the
/// ID scores.
pub fn far95(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut sorted = id.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (95 * sorted.len()).div_ceil(100);
    let threshold = sorted[rank - 1];
    let accepted = ood.iter().filter(|&&s| s <= threshold).count();
    Ok(accepted as f64 / ood.len() as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// ID and OOD test scores for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSample {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        check_scores(&id_scores, &ood_scores)?;
        Ok(Self {
            id_scores,
            ood_scores,
        })
    }

    pub fn evaluate(&self, accuracy: Option<f64>) -> Result<EvalReport> {
        Ok(EvalReport {
            auroc: auroc(&self.id_scores, &self.ood_scores)?,
            far95: far95(&self.id_scores, &self.ood_scores)?,
            accuracy,
            n_id: self.id_scores.len(),
            n_ood: self.ood_scores.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub far95: f64,
    pub accuracy: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
}
