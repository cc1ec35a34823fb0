//! Ground truth from positions and the retrieval metrics: AR@N, the top-1
//! precision/recall sweep, AUC, F1max and Recall@1%.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metric_index::Neighbor;

pub const AR_AT: [usize; 3] = [1, 5, 20];
pub const PLACE_GT_RADIUS: f64 = 10.0;
pub const LOOP_GT_RADIUS: f64 = 5.0;
pub const DEFAULT_EXCLUSION_FRAMES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthParams {
    /// Meters, measured in the xy-plane.
    pub gt_radius: f64,
    /// Same-sequence pairs at most this many frames apart are never positives.
    pub exclusion_frames: u32,
    /// Query and database are the same trajectory (loop closure).
    pub same_sequence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sorted database frame ids per query.
    positives: Vec<Vec<u32>>,
    pub params: GroundTruthParams,
}

impl GroundTruth {
    pub fn from_positives(mut positives: Vec<Vec<u32>>, params: GroundTruthParams) -> Self {
        positives.iter_mut().for_each(|p| {
            p.sort_unstable();
            p.dedup();
        });
        Self { positives, params }
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self, query: usize) -> &[u32] {
        &self.positives[query]
    }

    pub fn is_positive(&self, query: usize, frame_id: u32) -> bool {
        self.positives[query].binary_search(&frame_id).is_ok()
    }

    /// Queries with at least one positive; only these enter recall.
    pub fn is_evaluable(&self, query: usize) -> bool {
        !self.positives[query].is_empty()
    }

    pub fn evaluable_count(&self) -> usize {
        self.positives.iter().filter(|p| !p.is_empty()).count()
    }
}

pub fn build_ground_truth(
    query_positions: &[[f64; 3]],
    query_frames: &[u32],
    db_positions: &[[f64; 3]],
    db_frames: &[u32],
    params: GroundTruthParams,
) -> Result<GroundTruth> {
    if params.gt_radius.is_nan() || params.gt_radius <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "ground-truth radius {} must be positive",
            params.gt_radius
        )));
    }
    if query_positions.len() != query_frames.len() || db_positions.len() != db_frames.len() {
        return Err(Error::ShapeMismatch(
            "positions and frame ids differ in length".into(),
        ));
    }
    let r2 = params.gt_radius * params.gt_radius;
    let positives = query_positions
        .iter()
        .zip(query_frames)
        .map(|(q, &qf)| {
            db_positions
                .iter()
                .zip(db_frames)
                .filter(|(d, &df)| {
                    let (dx, dy) = (q[0] - d[0], q[1] - d[1]);
                    let near = dx * dx + dy * dy <= r2;
                    let far_in_time =
                        !params.same_sequence || qf.abs_diff(df) > params.exclusion_frames;
                    near && far_in_time
                })
                .map(|(_, &df)| df)
                .collect()
        })
        .collect();
    Ok(GroundTruth::from_positives(positives, params))
}

/// Fraction of evaluable queries with a positive among their first `n`
/// results.
pub fn recall_at_n(results: &[Vec<u32>], gt: &GroundTruth, n: usize) -> f64 {
    let evaluable = gt.evaluable_count();
    if evaluable == 0 {
        return 0.0;
    }
    let hits = results
        .iter()
        .enumerate()
        .filter(|&(q, ranked)| {
            gt.is_evaluable(q) && ranked.iter().take(n).any(|&id| gt.is_positive(q, id))
        })
        .count();
    hits as f64 / evaluable as f64
}

/// `N = max(1, ⌈db_size / 100⌉)`.
pub fn one_percent_cutoff(db_size: usize) -> usize {
    db_size.div_ceil(100).max(1)
}

pub fn recall_at_1pct(results: &[Vec<u32>], gt: &GroundTruth, db_size: usize) -> f64 {
    recall_at_n(results, gt, one_percent_cutoff(db_size))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Top-1 acceptance sweep. A query is accepted when its top-1 distance is at
/// most τ; τ runs over every observed top-1 distance in increasing order.
/// Accepted queries whose top-1 id is a positive are true positives; recall
/// is relative to the queries that have any positive.
pub fn precision_recall_curve(top1: &[Option<(u32, f64)>], gt: &GroundTruth) -> Vec<PrPoint> {
    let mut accepted: Vec<(f64, bool)> = top1
        .iter()
        .enumerate()
        .filter_map(|(q, hit)| hit.map(|(id, d)| (d, gt.is_positive(q, id))))
        .collect();
    accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let relevant = gt.evaluable_count();
    let mut curve = Vec::new();
    let (mut predicted, mut true_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < accepted.len() {
        let tau = accepted[i].0;
        while i < accepted.len() && accepted[i].0 <= tau {
            predicted += 1;
            true_pos += accepted[i].1 as usize;
            i += 1;
        }
        curve.push(PrPoint {
            precision: true_pos as f64 / predicted as f64,
            recall: if relevant == 0 {
                0.0
            } else {
                true_pos as f64 / relevant as f64
            },
        });
    }
    curve
}

/// Trapezoidal area under precision(recall), the curve being extended to
/// recall 0 at its first precision value.
pub fn auc(curve: &[PrPoint]) -> Result<f64> {
    let first = curve.first().ok_or(Error::EmptyCurve)?;
    let mut prev = PrPoint {
        precision: first.precision,
        recall: 0.0,
    };
    let mut area = 0.0;
    for p in curve {
        area += (p.recall - prev.recall) * 0.5 * (p.precision + prev.precision);
        prev = *p;
    }
    Ok(area)
}

pub fn f1max(curve: &[PrPoint]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    Ok(curve
        .iter()
        .map(|p| {
            let s = p.precision + p.recall;
            if s > 0.0 {
                2.0 * p.precision * p.recall / s
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ar_at: BTreeMap<usize, f64>,
    pub auc: f64,
    pub f1max: f64,
    pub recall_at_1: f64,
    pub recall_at_1pct: f64,
    pub pr_curve: Vec<PrPoint>,
}

impl EvalReport {
    /// Report for a run with nothing to score.
    pub fn zeros() -> Self {
        Self {
            ar_at: AR_AT.iter().map(|&n| (n, 0.0)).collect(),
            auc: 0.0,
            f1max: 0.0,
            recall_at_1: 0.0,
            recall_at_1pct: 0.0,
            pr_curve: Vec::new(),
        }
    }

    /// Scores ranked results (one list per query, best first). Lists must be
    /// at least `max(20, ⌈db_size/100⌉)` long to score every cutoff.
    pub fn from_results(results: &[Vec<Neighbor>], gt: &GroundTruth, db_size: usize) -> Self {
        let ids: Vec<Vec<u32>> = results
            .iter()
            .map(|r| r.iter().map(|n| n.frame_id).collect())
            .collect();
        let top1: Vec<Option<(u32, f64)>> = results
            .iter()
            .map(|r| r.first().map(|n| (n.frame_id, n.distance)))
            .collect();
        let pr_curve = precision_recall_curve(&top1, gt);
        Self {
            ar_at: AR_AT.iter().map(|&n| (n, recall_at_n(&ids, gt, n))).collect(),
            auc: auc(&pr_curve).unwrap_or(0.0),
            f1max: f1max(&pr_curve).unwrap_or(0.0),
            recall_at_1: recall_at_n(&ids, gt, 1),
            recall_at_1pct: recall_at_1pct(&ids, gt, db_size),
            pr_curve,
        }
    }

    /// `metric=value` lines with six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, v) in &self.ar_at {
            writeln!(out, "ar_at_{n}={v:.6}").unwrap();
        }
        writeln!(out, "auc={:.6}", self.auc).unwrap();
        writeln!(out, "f1max={:.6}", self.f1max).unwrap();
        writeln!(out, "recall_at_1={:.6}", self.recall_at_1).unwrap();
        writeln!(out, "recall_at_1pct={:.6}", self.recall_at_1pct).unwrap();
        out
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("precision,recall\n");
        for p in &self.pr_curve {
            writeln!(out, "{:.6},{:.6}", p.precision, p.recall).unwrap();
        }
        out
    }
}

/// Parses the text written by [`EvalReport::to_text`] into a key → value map.
pub fn parse_report_text(text: &str) -> Result<BTreeMap<String, f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("report line without '=': {line:?}")))?;
            let v = v
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("report value {v:?}: {e}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
