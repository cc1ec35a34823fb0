//! Manifold-adapted, locality-weighted metric learning.
//!
//! The fitted metric is `M = W1 W2 W2ᵀ W1ᵀ` where
//!
//! * `W1` (D×d1) holds the leading principal axes of the descriptor
//!   covariance, and
//! * `W2` (d1×d2) holds the leading generalized eigenvectors of
//!   `S_B w = λ S_W w`, with `S_W` / `S_B` the heat-kernel weighted
//!   within-class and between-class scatter of the PCA-reduced descriptors.
//!
//! Kernel bandwidths are local: `σ_i` is the distance from sample `i` to its
//! k-th nearest same-class neighbour and pair `(i, j)` uses `σ_i σ_j`.
//!
//! `M` has rank at most d2, so on the ambient space it is only positive
//! semi-definite. It is never formed for retrieval; distances are Euclidean
//! norms after the D×d2 map `(W1 W2)ᵀ`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::descriptor_store::DescriptorSet;
use crate::error::{Error, Result};

pub const SPD_MAGIC: [u8; 4] = *b"SPD1";

const SYMMETRY_TOL: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-8;
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MapvlmConfig {
    /// PCA output dimension.
    pub d1: usize,
    /// Discriminant output dimension, `d2 <= d1`.
    pub d2: usize,
    /// Neighbour rank used for the adaptive bandwidth.
    pub k_neighbor: usize,
    /// `S_W` is regularised by `reg_epsilon_scale · trace(S_W) / d1`.
    pub reg_epsilon_scale: f64,
    /// Classes with fewer members are dropped before fitting. Singleton
    /// classes are always dropped.
    pub min_class_size: usize,
}

impl Default for MapvlmConfig {
    fn default() -> Self {
        Self {
            d1: 256,
            d2: 256,
            k_neighbor: 7,
            reg_epsilon_scale: 1e-6,
            min_class_size: 2,
        }
    }
}

impl MapvlmConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(1 <= self.d2 && self.d2 <= self.d1 && self.d1 <= dim) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= d2 ({}) <= d1 ({}) <= D ({dim})",
                self.d2, self.d1
            )));
        }
        if self.k_neighbor == 0 {
            return Err(Error::InvalidConfig("k_neighbor must be at least 1".into()));
        }
        if self.min_class_size == 0 {
            return Err(Error::InvalidConfig("min_class_size must be at least 1".into()));
        }
        if !(self.reg_epsilon_scale >= 0.0 && self.reg_epsilon_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "reg_epsilon_scale {} must be a nonnegative number",
                self.reg_epsilon_scale
            )));
        }
        Ok(())
    }
}

/// Learned factors of the Mahalanobis matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    pca_eigenvalues: Vec<f64>,
    lfda_eigenvalues: Vec<f64>,
    mean: DVector<f64>,
    /// `W1 W2`, D×d2.
    transform: DMatrix<f64>,
}

impl MetricModel {
    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    /// Covariance eigenvalues kept by the PCA stage. Empty for models read
    /// back from an `SPD1` file, which does not store them.
    pub fn pca_eigenvalues(&self) -> &[f64] {
        &self.pca_eigenvalues
    }

    pub fn lfda_eigenvalues(&self) -> &[f64] {
        &self.lfda_eigenvalues
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// The D×d2 product `W1 W2`.
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d1(&self) -> usize {
        self.w1.ncols()
    }

    pub fn d2(&self) -> usize {
        self.w2.ncols()
    }

    /// Dense `M = W1 W2 W2ᵀ W1ᵀ`. Only meant for verification.
    pub fn materialize_m(&self) -> DMatrix<f64> {
        &self.transform * self.transform.transpose()
    }

    /// `(W1 W2)ᵀ (f − mean)`.
    pub fn embed(&self, f: &[f64]) -> Result<DVector<f64>> {
        if f.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a model of dimension {}",
                f.len(),
                self.dim()
            )));
        }
        let centered = DVector::from_column_slice(f) - &self.mean;
        Ok(self.transform.tr_mul(&centered))
    }

    /// Same metric with identity factors: plain Euclidean distance in `dim`.
    pub fn identity(dim: usize) -> Self {
        Self::from_parts(
            DMatrix::identity(dim, dim),
            DMatrix::identity(dim, dim),
            vec![1.0; dim],
            vec![1.0; dim],
            DVector::zeros(dim),
        )
    }

    /// Assembles a model without validation.
    fn from_parts(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        pca_eigenvalues: Vec<f64>,
        lfda_eigenvalues: Vec<f64>,
        mean: DVector<f64>,
    ) -> Self {
        let transform = &w1 * &w2;
        Self {
            w1,
            w2,
            pca_eigenvalues,
            lfda_eigenvalues,
            mean,
            transform,
        }
    }

    /// Fraction of total covariance energy retained by `W1`, when known.
    pub fn pca_energy_fraction(&self, total_variance: f64) -> Option<f64> {
        (total_variance > 0.0 && !self.pca_eigenvalues.is_empty())
            .then(|| self.pca_eigenvalues.iter().sum::<f64>() / total_variance)
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, top `count` kept.
fn top_eigenpairs(m: DMatrix<f64>, count: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(count);
    let mut vectors = eig.eigenvectors.select_columns(&order);
    fix_signs(&mut vectors);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (vectors, values)
}

/// Biased (`1/N`) covariance and the mean row of `x` (N×D).
pub fn compute_covariance(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut c = centered.tr_mul(&centered) / n as f64;
    symmetrize(&mut c);
    Ok((c, mean))
}

/// Leading `d1` unit eigenvectors of `c` and their eigenvalues (descending,
/// clamped at zero).
pub fn pca_projection(c: &DMatrix<f64>, d1: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_symmetric(c)?;
    if d1 == 0 || d1 > c.nrows() {
        return Err(Error::DimensionError(format!(
            "d1 = {d1} outside 1..={}",
            c.nrows()
        )));
    }
    let mut sym = c.clone();
    symmetrize(&mut sym);
    let (w1, values) = top_eigenpairs(sym, d1);
    Ok((w1, values.into_iter().map(|v| v.max(0.0)).collect()))
}

/// Centered projection `(x − mean) W1`.
pub fn reduce(x: &DMatrix<f64>, w1: &DMatrix<f64>, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != w1.nrows() || mean.len() != w1.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "X is {}x{}, W1 is {}x{}, mean has length {}",
            x.nrows(),
            x.ncols(),
            w1.nrows(),
            w1.ncols(),
            mean.len()
        )));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    Ok(centered * w1)
}

fn row_distance_sq(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn class_members(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        classes.entry(y).or_default().push(i);
    }
    classes
}

/// Per-sample bandwidth: distance to the k-th nearest same-class sample, or
/// to the farthest one when the class has fewer than `k` other members.
pub fn adaptive_bandwidths(x_red: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.len() != x_red.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x_red.nrows()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let classes = class_members(labels);
    let mut sigma = vec![0.0; labels.len()];
    for (&class, members) in &classes {
        if members.len() < 2 {
            return Err(Error::DegenerateClass {
                index: members[0],
                class,
            });
        }
        for &i in members {
            let mut dists: Vec<f64> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| row_distance_sq(x_red, i, j).sqrt())
                .collect();
            dists.sort_by(f64::total_cmp);
            let rank = k.min(dists.len()) - 1;
            sigma[i] = dists[rank].max(SIGMA_FLOOR);
        }
    }
    Ok(sigma)
}

/// Heat-kernel affinities `exp(−d_ij² / (σ_i σ_j))`, split by whether the
/// pair shares a class. Returns `(A_w, A_b)`.
pub fn affinity_matrices(
    x_red: &DMatrix<f64>,
    labels: &[usize],
    sigma: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x_red.nrows();
    if labels.len() != n || sigma.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} samples, {} labels, {} bandwidths",
            labels.len(),
            sigma.len()
        )));
    }
    let mut a_w = DMatrix::zeros(n, n);
    let mut a_b = DMatrix::zeros(n, n);
    for i in 0..n {
        a_w[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = (-row_distance_sq(x_red, i, j) / (sigma[i] * sigma[j])).exp();
            let target = if labels[i] == labels[j] { &mut a_w } else { &mut a_b };
            target[(i, j)] = v;
            target[(j, i)] = v;
        }
    }
    Ok((a_w, a_b))
}

/// `½ Σ_ij A_ij (x_i − x_j)(x_i − x_j)ᵀ`, evaluated as `Xᵀ (diag(A·1) − A) X`.
fn weighted_scatter(x: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut laplacian = -a.clone();
    for i in 0..a.nrows() {
        laplacian[(i, i)] += a.row(i).sum();
    }
    let mut s = x.tr_mul(&(laplacian * x));
    symmetrize(&mut s);
    s
}

/// Weighted within-class and between-class scatter `(S_W, S_B)`.
pub fn scatter_matrices(
    x_red: &DMatrix<f64>,
    a_w: &DMatrix<f64>,
    a_b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x_red.nrows();
    for (name, a) in [("A_w", a_w), ("A_b", a_b)] {
        if a.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {}x{}, expected {n}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
    }
    Ok((weighted_scatter(x_red, a_w), weighted_scatter(x_red, a_b)))
}

/// Leading `d2` solutions of `S_B w = λ (S_W + εI) w`.
///
/// Reduced to a standard symmetric problem through the Cholesky factor
/// `S_W + εI = L Lᵀ`. Columns of `W2` satisfy `wᵀ (S_W + εI) w = 1` and are
/// ordered by descending λ.
pub fn solve_generalized_eig(
    s_b: &DMatrix<f64>,
    s_w: &DMatrix<f64>,
    d2: usize,
    reg_epsilon_scale: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_symmetric(s_b)?;
    check_symmetric(s_w)?;
    let d1 = s_w.nrows();
    if s_b.nrows() != d1 {
        return Err(Error::ShapeMismatch(format!(
            "S_B is {0}x{0}, S_W is {d1}x{d1}",
            s_b.nrows()
        )));
    }
    if d2 == 0 || d2 > d1 {
        return Err(Error::DimensionError(format!("d2 = {d2} outside 1..={d1}")));
    }
    let s_w_reg = regularized_within(s_w, reg_epsilon_scale);
    let chol = s_w_reg.cholesky().ok_or_else(|| {
        Error::SolverFailure("regularized within-class scatter is not positive definite".into())
    })?;
    let l = chol.l();
    let not_invertible = || Error::SolverFailure("Cholesky factor is singular".into());
    // C = L⁻¹ S_B L⁻ᵀ
    let half = l.solve_lower_triangular(s_b).ok_or_else(not_invertible)?;
    let mut reduced = l
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(not_invertible)?;
    symmetrize(&mut reduced);
    let (y, values) = top_eigenpairs(reduced, d2);
    let mut w2 = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(not_invertible)?;
    fix_signs(&mut w2);
    Ok((w2, values))
}

/// `S_W + εI` with `ε = scale · trace(S_W) / d1`, or `ε = scale` when the
/// trace vanishes.
pub fn regularized_within(s_w: &DMatrix<f64>, reg_epsilon_scale: f64) -> DMatrix<f64> {
    let d1 = s_w.nrows();
    let trace = s_w.trace();
    let eps = if trace > 0.0 {
        reg_epsilon_scale * trace / d1 as f64
    } else {
        reg_epsilon_scale
    };
    let mut reg = s_w.clone();
    for i in 0..d1 {
        reg[(i, i)] += eps;
    }
    reg
}

pub fn build_metric(
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    mean: DVector<f64>,
    pca_eigenvalues: Vec<f64>,
    lfda_eigenvalues: Vec<f64>,
) -> Result<MetricModel> {
    let (dim, d1) = w1.shape();
    if w2.nrows() != d1 || mean.len() != dim || lfda_eigenvalues.len() != w2.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "W1 {dim}x{d1}, W2 {}x{}, mean {}, {} eigenvalues",
            w2.nrows(),
            w2.ncols(),
            mean.len(),
            lfda_eigenvalues.len()
        )));
    }
    if !pca_eigenvalues.is_empty() && pca_eigenvalues.len() != d1 {
        return Err(Error::ShapeMismatch(format!(
            "{} PCA eigenvalues for d1 = {d1}",
            pca_eigenvalues.len()
        )));
    }
    let gram_err = (w1.tr_mul(&w1) - DMatrix::identity(d1, d1)).amax();
    if gram_err > ORTHONORMAL_TOL {
        return Err(Error::ShapeMismatch(format!(
            "W1 columns are not orthonormal (|W1ᵀW1 − I| = {gram_err:e})"
        )));
    }
    if w2.iter().all(|&v| v == 0.0) {
        warn!("W2 is identically zero; the learned metric is degenerate (M = 0)");
    }
    Ok(MetricModel::from_parts(
        w1,
        w2,
        pca_eigenvalues,
        lfda_eigenvalues,
        mean,
    ))
}

/// What survived class filtering during [`fit_with_summary`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub samples_used: usize,
    pub samples_dropped: usize,
    pub classes_used: usize,
    pub classes_dropped: usize,
    /// Trace of the descriptor covariance, for energy fractions.
    pub total_variance: f64,
}

pub fn fit(set: &DescriptorSet, cfg: &MapvlmConfig) -> Result<MetricModel> {
    fit_with_summary(set, cfg).map(|(model, _)| model)
}

pub fn fit_with_summary(set: &DescriptorSet, cfg: &MapvlmConfig) -> Result<(MetricModel, FitSummary)> {
    cfg.validate(set.dim())?;
    let labels = set.labels.as_ref().ok_or(Error::Unlabeled)?;
    let min_size = cfg.min_class_size.max(2);
    let classes = class_members(labels);
    let kept: Vec<usize> = {
        let mut kept: Vec<usize> = classes
            .values()
            .filter(|m| m.len() >= min_size)
            .flatten()
            .copied()
            .collect();
        kept.sort_unstable();
        kept
    };
    let classes_used = classes.values().filter(|m| m.len() >= min_size).count();
    if classes_used < 2 {
        return Err(Error::InsufficientData(format!(
            "{classes_used} of {} classes have at least {min_size} members; need 2",
            classes.len()
        )));
    }
    if kept.len() < cfg.d1 + 1 {
        warn!(
            "only {} samples for d1 = {}; within-class scatter will be rank deficient",
            kept.len(),
            cfg.d1
        );
    }
    let subset = set.select(&kept);
    let sub_labels = subset.labels.as_deref().unwrap_or_default();
    let x = subset.to_matrix();

    let (c, mean) = compute_covariance(&x)?;
    let total_variance = c.trace();
    let (w1, pca_values) = pca_projection(&c, cfg.d1)?;
    let x_red = reduce(&x, &w1, &mean)?;
    let sigma = adaptive_bandwidths(&x_red, sub_labels, cfg.k_neighbor)?;
    let (a_w, a_b) = affinity_matrices(&x_red, sub_labels, &sigma)?;
    let (s_w, s_b) = scatter_matrices(&x_red, &a_w, &a_b)?;
    let (w2, lfda_values) = solve_generalized_eig(&s_b, &s_w, cfg.d2, cfg.reg_epsilon_scale)?;
    let model = build_metric(w1, w2, mean, pca_values, lfda_values)?;
    let summary = FitSummary {
        samples_used: kept.len(),
        samples_dropped: set.len() - kept.len(),
        classes_used,
        classes_dropped: classes.len() - classes_used,
        total_variance,
    };
    Ok((model, summary))
}

fn put_matrix_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

/// `SPD1` encoding: magic, D, d1, d2 (u32 LE), then mean, W1, W2 (row-major)
/// and the discriminant eigenvalues as f64 LE.
pub fn encode_model(model: &MetricModel) -> Vec<u8> {
    let (dim, d1, d2) = (model.dim(), model.d1(), model.d2());
    let mut out = Vec::with_capacity(16 + 8 * (dim + dim * d1 + d1 * d2 + d2));
    out.extend_from_slice(&SPD_MAGIC);
    for v in [dim, d1, d2] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in model.mean.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_matrix_row_major(&mut out, &model.w1);
    put_matrix_row_major(&mut out, &model.w2);
    for v in &model.lfda_eigenvalues {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<MetricModel> {
    let truncated = |what: &str| Error::TruncatedFile(format!("SPD1 {what}"));
    if bytes.len() < 16 {
        return Err(truncated("header"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != SPD_MAGIC {
        return Err(Error::BadMagic {
            expected: SPD_MAGIC,
            found: magic,
        });
    }
    let u = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (dim, d1, d2) = (u(0), u(1), u(2));
    let expected = [dim, dim * d1, d1 * d2, d2]
        .iter()
        .try_fold(16usize, |acc, &n| n.checked_mul(8).and_then(|b| acc.checked_add(b)))
        .ok_or_else(|| truncated("declared dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(truncated(&format!(
            "payload: need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = bytes[16..expected]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let mean = DVector::from_vec(take(dim));
    let w1 = DMatrix::from_row_slice(dim, d1, &take(dim * d1));
    let w2 = DMatrix::from_row_slice(d1, d2, &take(d1 * d2));
    let lambda = take(d2);
    Ok(MetricModel::from_parts(w1, w2, Vec::new(), lambda, mean))
}

pub fn save_model(model: &MetricModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MetricModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_of_two_points() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let (c, mean) = compute_covariance(&x).unwrap();
        assert_eq!(mean, DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let x = DMatrix::from_row_slice(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        let (c, _) = compute_covariance(&x).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(matches!(compute_covariance(&DMatrix::zeros(0, 2)), Err(Error::EmptySet)));
    }

    #[test]
    fn pca_on_diagonal() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let (w1, values) = pca_projection(&c, 2).unwrap();
        assert_abs_diff_eq!(w1, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(values[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pca_degenerate_spectrum() {
        let c = DMatrix::<f64>::identity(4, 4);
        let (w1, values) = pca_projection(&c, 1).unwrap();
        let w = w1.column(0);
        assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-12);
        assert!((&c * w - w * values[0]).norm() < 1e-12);
    }

    #[test]
    fn pca_rejects_asymmetric_input() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(pca_projection(&c, 1), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn reduce_identity_and_mean_row() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = reduce(&x, &DMatrix::identity(3, 3), &DVector::zeros(3)).unwrap();
        assert_eq!(out, x);
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = reduce(&x, &DMatrix::identity(3, 3), &mean).unwrap();
        assert!(out.row(0).iter().all(|&v| v == 0.0));
        assert!(matches!(
            reduce(&x, &DMatrix::identity(2, 2), &DVector::zeros(2)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bandwidth_pair() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 3.0]);
        assert_eq!(adaptive_bandwidths(&x, &[0, 0], 1).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn bandwidth_collinear_triple() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 4.0]);
        // Same-class distances: 0→{1,4}, 1→{1,3}, 4→{3,4}.
        assert_eq!(adaptive_bandwidths(&x, &[0, 0, 0], 2).unwrap(), vec![4.0, 3.0, 4.0]);
        // k beyond class size falls back to the farthest member.
        assert_eq!(adaptive_bandwidths(&x, &[0, 0, 0], 5).unwrap(), vec![4.0, 3.0, 4.0]);
        assert_eq!(adaptive_bandwidths(&x, &[0, 0, 0], 1).unwrap(), vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn bandwidth_floor_for_duplicates() {
        let x = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        assert_eq!(adaptive_bandwidths(&x, &[0, 0], 1).unwrap(), vec![1e-12, 1e-12]);
    }

    #[test]
    fn bandwidth_singleton_class() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
        assert!(matches!(
            adaptive_bandwidths(&x, &[0, 0, 1], 1),
            Err(Error::DegenerateClass { index: 2, class: 1 })
        ));
    }

    #[test]
    fn affinity_unit_exponent() {
        let d = 2.5;
        let x = DMatrix::from_row_slice(2, 1, &[0.0, d]);
        let (a_w, a_b) = affinity_matrices(&x, &[0, 0], &[d, d]).unwrap();
        assert_abs_diff_eq!(a_w[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(a_w[(0, 1)], 0.367879, epsilon = 1e-6);
        assert_eq!(a_w[(0, 0)], 1.0);
        assert!(a_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affinity_between_classes() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (a_w, a_b) = affinity_matrices(&x, &[0, 1], &[2.0, 0.5]).unwrap();
        assert_eq!(a_w[(0, 1)], 0.0);
        assert_abs_diff_eq!(a_b[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(a_b[(0, 1)], a_b[(1, 0)]);
    }

    #[test]
    fn scatter_hand_expansion() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let a = 0.3;
        let a_w = DMatrix::from_row_slice(2, 2, &[1.0, a, a, 1.0]);
        let (s_w, s_b) = scatter_matrices(&x, &a_w, &DMatrix::zeros(2, 2)).unwrap();
        assert_abs_diff_eq!(s_w[(0, 0)], 4.0 * a, epsilon = 1e-14);
        assert_eq!(s_b[(0, 0)], 0.0);
    }

    #[test]
    fn scatter_of_identical_points() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let a = DMatrix::from_element(3, 3, 0.7);
        let (s_w, s_b) = scatter_matrices(&x, &a, &a).unwrap();
        assert!(s_w.amax() < 1e-14 && s_b.amax() < 1e-14);
    }

    #[test]
    fn generalized_eig_diagonal() {
        let s_b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let s_w = DMatrix::identity(2, 2);
        let (w2, values) = solve_generalized_eig(&s_b, &s_w, 2, 0.0).unwrap();
        assert_abs_diff_eq!(values[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(values[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w2, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn generalized_eig_null_between_scatter() {
        let s_w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (w2, values) = solve_generalized_eig(&DMatrix::zeros(2, 2), &s_w, 2, 1e-6).unwrap();
        assert!(values.iter().all(|v| v.abs() < 1e-12));
        let gram = w2.transpose() * regularized_within(&s_w, 1e-6) * &w2;
        assert_abs_diff_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-10);
    }

    #[test]
    fn generalized_eig_zero_within_scatter_uses_absolute_epsilon() {
        let s_b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let (_, values) = solve_generalized_eig(&s_b, &DMatrix::zeros(2, 2), 1, 1e-3).unwrap();
        assert_abs_diff_eq!(values[0], 1e3, epsilon = 1e-6);
    }

    #[test]
    fn generalized_eig_needs_positive_definite_within() {
        let s_w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5.0]));
        let err = solve_generalized_eig(&DMatrix::identity(2, 2), &s_w, 1, 1e-6).unwrap_err();
        assert!(matches!(err, Error::SolverFailure(_)));
    }

    #[test]
    fn metric_from_unit_factors() {
        let w1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let w2 = DMatrix::from_element(1, 1, 1.0);
        let m = build_metric(w1, w2, DVector::zeros(2), vec![1.0], vec![1.0]).unwrap();
        assert_eq!(m.materialize_m(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn metric_with_zero_w2() {
        let m = build_metric(
            DMatrix::identity(3, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(3),
            vec![],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!(m.materialize_m().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn metric_rejects_bad_shapes() {
        let err = build_metric(
            DMatrix::identity(3, 2),
            DMatrix::zeros(3, 2),
            DVector::zeros(3),
            vec![],
            vec![0.0, 0.0],
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
        let err = build_metric(
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::zeros(2),
            vec![],
            vec![0.0],
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(MapvlmConfig::default().validate(768).is_ok());
        assert!(MapvlmConfig::default().validate(128).is_err());
        let cfg = MapvlmConfig { d1: 4, d2: 5, ..Default::default() };
        assert!(cfg.validate(8).is_err());
        let cfg = MapvlmConfig { d1: 4, d2: 2, k_neighbor: 0, ..Default::default() };
        assert!(cfg.validate(8).is_err());
    }

    #[test]
    fn fit_needs_two_classes() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64, 1.0]).collect();
        let set = DescriptorSet::from_rows(&rows, vec![[0.0; 3]; 6], (0..6).collect()).unwrap();
        let cfg = MapvlmConfig { d1: 2, d2: 1, ..Default::default() };
        assert!(matches!(fit(&set, &cfg), Err(Error::Unlabeled)));
        let one = set.clone().with_labels(vec![0; 6]).unwrap();
        assert!(matches!(fit(&one, &cfg), Err(Error::InsufficientData(_))));
        // A singleton second class is dropped, leaving one class.
        let lopsided = set.with_labels(vec![0, 0, 0, 0, 0, 1]).unwrap();
        assert!(matches!(fit(&lopsided, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn spd_rejects_bad_magic_and_truncation() {
        let model = MetricModel::identity(3);
        let mut bytes = encode_model(&model);
        assert_eq!(bytes.len(), 16 + 8 * (3 + 9 + 9 + 3));
        assert!(matches!(decode_model(&bytes[..bytes.len() - 1]), Err(Error::TruncatedFile(_))));
        bytes[3] = b'0';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic { .. })));
    }
}
