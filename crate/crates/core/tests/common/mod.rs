//! Test-only generators and brute-force oracles. Nothing here calls into the
//! code paths it is used to check.
#![allow(dead_code)]

use lpr_core::descriptor_store::DescriptorSet;
use lpr_core::scan_io::{Point, PointCloud};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `rows × cols` with orthonormal columns.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, rows, cols).qr().q()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, rank);
    &a * a.transpose()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, frame_id: u32) -> PointCloud {
    let points = (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(-70.0..70.0),
                rng.random_range(-70.0..70.0),
                rng.random_range(-6.0..14.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    PointCloud::new(points, frame_id)
}

pub fn set_from_matrix(x: &DMatrix<f64>, labels: Option<Vec<usize>>) -> DescriptorSet {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let n = rows.len();
    let set = DescriptorSet::from_rows(&rows, vec![[0.0; 3]; n], (0..n as u32).collect()).unwrap();
    match labels {
        Some(l) => set.with_labels(l).unwrap(),
        None => set,
    }
}

/// Rows of `x` after the `f32` round trip a [`DescriptorSet`] applies.
pub fn as_stored(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v as f32 as f64)
}

// ---------------------------------------------------------------- oracles

pub fn naive_mean(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64)
        .collect()
}

pub fn naive_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mean = naive_mean(x);
    let mut c = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
        }
    }
    c / n as f64
}

pub fn naive_matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

pub fn naive_dist(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols())
        .map(|k| (x[(i, k)] - x[(j, k)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// k-th nearest same-class distance by full enumeration, farthest when the
/// class is too small.
pub fn naive_bandwidths(x: &DMatrix<f64>, labels: &[usize], k: usize) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let mut d: Vec<f64> = (0..x.nrows())
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| naive_dist(x, i, j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[k.min(d.len()) - 1].max(1e-12)
        })
        .collect()
}

pub fn naive_affinities(
    x: &DMatrix<f64>,
    labels: &[usize],
    sigma: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mut a_w = DMatrix::zeros(n, n);
    let mut a_b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = naive_dist(x, i, j);
            let v = (-(d * d) / (sigma[i] * sigma[j])).exp();
            if labels[i] == labels[j] {
                a_w[(i, j)] = v;
            } else {
                a_b[(i, j)] = v;
            }
        }
    }
    (a_w, a_b)
}

/// `½ Σ_ij A_ij (x_i − x_j)(x_i − x_j)ᵀ` as a literal double loop.
pub fn naive_scatter(x: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut s = DMatrix::zeros(d, d);
    for i in 0..n {
        for j in 0..n {
            for p in 0..d {
                for q in 0..d {
                    s[(p, q)] += 0.5 * a[(i, j)] * (x[(i, p)] - x[(j, p)]) * (x[(i, q)] - x[(j, q)]);
                }
            }
        }
    }
    s
}

/// Naive O(w²) DFT magnitudes of the first `count` coefficients.
pub fn naive_dft_magnitudes(signal: &[f64], count: usize) -> Vec<f64> {
    let w = signal.len() as f64;
    (0..count)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &s) in signal.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / w;
                re += s * angle.cos();
                im += s * angle.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// `√(δᵀ M δ)` with a dense `M`.
pub fn dense_mahalanobis(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let d = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
    d.dot(&(m * &d)).max(0.0).sqrt()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Leave-one-out Recall@1 by exhaustive search over embedded rows.
pub fn loo_recall_at_1(points: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let mut hits = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d: f64 = (0..points.ncols())
                .map(|k| (points[(i, k)] - points[(j, k)]).powi(2))
                .sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        hits += (labels[best.1] == labels[i]) as usize;
    }
    hits as f64 / n as f64
}

/// Classes whose means differ only in a 56-D signal subspace while the
/// within-class spread lives in a shared 8-D noise subspace at ten times the
/// signal scale, plus a little isotropic jitter.
pub struct AnisotropicBenchmark {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

pub fn anisotropic_benchmark(seed: u64) -> AnisotropicBenchmark {
    const DIM: usize = 64;
    const NOISE_DIM: usize = 8;
    const CLASSES: usize = 20;
    const PER_CLASS: usize = 50;
    const SIGNAL_SCALE: f64 = 1.0;
    const NOISE_SCALE: f64 = 10.0;
    const JITTER: f64 = 0.05;

    let mut rng = rng(seed);
    let basis = random_orthonormal(&mut rng, DIM, DIM);
    let noise_basis = basis.columns(0, NOISE_DIM).into_owned();
    let signal_basis = basis.columns(NOISE_DIM, DIM - NOISE_DIM).into_owned();
    let mut x = DMatrix::zeros(CLASSES * PER_CLASS, DIM);
    let mut labels = Vec::with_capacity(CLASSES * PER_CLASS);
    for c in 0..CLASSES {
        let z = DVector::from_vec(gaussian_vec(&mut rng, DIM - NOISE_DIM)) * SIGNAL_SCALE;
        let mean = &signal_basis * z;
        for s in 0..PER_CLASS {
            let g = DVector::from_vec(gaussian_vec(&mut rng, NOISE_DIM)) * NOISE_SCALE;
            let jitter = DVector::from_vec(gaussian_vec(&mut rng, DIM)) * JITTER;
            let row = &mean + &noise_basis * g + jitter;
            x.row_mut(c * PER_CLASS + s).copy_from(&row.transpose());
            labels.push(c);
        }
    }
    AnisotropicBenchmark { x, labels }
}
