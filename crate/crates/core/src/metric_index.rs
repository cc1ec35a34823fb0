//! Exhaustive k-NN retrieval under a learned Mahalanobis metric.
//!
//! `d_M(a, b)² = (a − b)ᵀ W1 W2 W2ᵀ W1ᵀ (a − b) = ‖(W1 W2)ᵀ a − (W1 W2)ᵀ b‖²`,
//! so every database descriptor is mapped once to d2 dimensions and queries
//! reduce to Euclidean scans there.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::descriptor_store::DescriptorSet;
use crate::error::{Error, Result};
use crate::mapvlm::MetricModel;

/// `√((a − b)ᵀ M (a − b))`, computed through the factors.
pub fn mahalanobis_distance(a: &[f64], b: &[f64], model: &MetricModel) -> Result<f64> {
    if a.len() != model.dim() || b.len() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {} for a model of dimension {}",
            a.len(),
            b.len(),
            model.dim()
        )));
    }
    let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
    Ok(model.transform().tr_mul(&diff).norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub frame_id: u32,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct MetricIndex {
    /// N×d2, one embedded descriptor per row.
    transformed: DMatrix<f64>,
    frame_ids: Vec<u32>,
    positions: Vec<[f32; 3]>,
    model: MetricModel,
}

impl MetricIndex {
    pub fn build(set: &DescriptorSet, model: &MetricModel) -> Result<Self> {
        if set.dim() != model.dim() {
            return Err(Error::ShapeMismatch(format!(
                "descriptors have dimension {}, model expects {}",
                set.dim(),
                model.dim()
            )));
        }
        let mut centered = set.to_matrix();
        for mut row in centered.row_iter_mut() {
            row -= model.mean().transpose();
        }
        Ok(Self {
            transformed: centered * model.transform(),
            frame_ids: set.frame_ids.clone(),
            positions: set.positions.clone(),
            model: model.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn frame_ids(&self) -> &[u32] {
        &self.frame_ids
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn model(&self) -> &MetricModel {
        &self.model
    }

    pub fn transformed(&self) -> &DMatrix<f64> {
        &self.transformed
    }

    /// The `k` nearest entries, ascending by distance, ties by frame id.
    pub fn query(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.query_filtered(query, k, |_| true)
    }

    /// As [`MetricIndex::query`], considering only entries whose frame id
    /// passes `accept`.
    pub fn query_filtered(
        &self,
        query: &[f64],
        k: usize,
        accept: impl Fn(u32) -> bool,
    ) -> Result<Vec<Neighbor>> {
        let q = self.model.embed(query)?;
        let mut hits: Vec<Neighbor> = self
            .transformed
            .row_iter()
            .zip(&self.frame_ids)
            .filter(|(_, &id)| accept(id))
            .map(|(row, &frame_id)| {
                let d2: f64 = row.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                Neighbor {
                    frame_id,
                    distance: d2.sqrt(),
                }
            })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, neighbor_order);
            hits.truncate(k);
        }
        hits.sort_by(neighbor_order);
        Ok(hits)
    }
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.frame_id.cmp(&b.frame_id))
}

pub fn build_index(set: &DescriptorSet, model: &MetricModel) -> Result<MetricIndex> {
    MetricIndex::build(set, model)
}

pub fn query_knn(index: &MetricIndex, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    index.query(query, k)
}
