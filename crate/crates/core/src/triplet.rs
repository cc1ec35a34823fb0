//! Mahalanobis triplet loss `α + max_p d_M(q, p) − min_n d_M(q, n)` and
//! hardest-sample mining.
//!
//! The loss is returned as written, without clamping; pass `hinge = true`
//! for `max(0, ·)`.

use crate::error::{Error, Result};
use crate::mapvlm::MetricModel;
use crate::metric_index::mahalanobis_distance;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub query: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub margin: f64,
}

impl TripletBatch {
    pub fn new(
        query: Vec<f64>,
        positives: Vec<Vec<f64>>,
        negatives: Vec<Vec<f64>>,
        margin: f64,
    ) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::EmptyList("positive"));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyList("negative"));
        }
        if margin.is_nan() || margin < 0.0 {
            return Err(Error::InvalidConfig(format!("margin {margin} must be nonnegative")));
        }
        Ok(Self {
            query,
            positives,
            negatives,
            margin,
        })
    }
}

fn distances(query: &[f64], others: &[Vec<f64>], model: &MetricModel) -> Result<Vec<f64>> {
    others
        .iter()
        .map(|o| mahalanobis_distance(query, o, model))
        .collect()
}

/// Loss from precomputed query-positive and query-negative distances.
pub fn triplet_loss_from_distances(
    positive: &[f64],
    negative: &[f64],
    margin: f64,
    hinge: bool,
) -> Result<f64> {
    let hardest_pos = positive
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyList("positive"))?;
    let hardest_neg = negative
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(Error::EmptyList("negative"))?;
    let loss = margin + hardest_pos - hardest_neg;
    Ok(if hinge { loss.max(0.0) } else { loss })
}

pub fn triplet_loss(batch: &TripletBatch, model: &MetricModel, hinge: bool) -> Result<f64> {
    let pos = distances(&batch.query, &batch.positives, model)?;
    let neg = distances(&batch.query, &batch.negatives, model)?;
    triplet_loss_from_distances(&pos, &neg, batch.margin, hinge)
}

/// Index of the largest value, first one on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// `(farthest positive, nearest negative)` under the model's metric.
pub fn mine_hardest(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    model: &MetricModel,
) -> Result<(usize, usize)> {
    if positives.is_empty() {
        return Err(Error::EmptyList("positive"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyList("negative"));
    }
    let pos = distances(query, positives, model)?;
    let neg = distances(query, negatives, model)?;
    Ok((argmax(&pos), argmin(&neg)))
}
