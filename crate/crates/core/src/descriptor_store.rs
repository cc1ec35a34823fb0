//! Global descriptor sets: the `DSC1` container, CSV import, a Fourier
//! baseline descriptor and place-class labelling.
//!
//! `DSC1` layout (all little-endian):
//!
//! ```text
//! magic "DSC1" | N: u32 | D: u32 | N·D f32 row-major | N·3 f32 positions | N u32 frame ids
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::projection::PseudoGlobalView;

pub const DSC_MAGIC: [u8; 4] = *b"DSC1";
pub const DEFAULT_DESCRIPTOR_DIM: usize = 768;
pub const DEFAULT_CLASS_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    /// Row-major `N × dim`.
    vectors: Vec<f32>,
    pub positions: Vec<[f32; 3]>,
    pub frame_ids: Vec<u32>,
    /// Place-class ids, filled in by [`assign_place_classes`].
    pub labels: Option<Vec<usize>>,
}

impl DescriptorSet {
    pub fn new(
        dim: usize,
        vectors: Vec<f32>,
        positions: Vec<[f32; 3]>,
        frame_ids: Vec<u32>,
    ) -> Result<Self> {
        let n = positions.len();
        if frame_ids.len() != n || vectors.len() != n * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} rows of dimension {dim}, {} frame ids",
                vectors.len(),
                frame_ids.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::DimensionError(format!(
                "descriptor {} has a non-finite entry",
                i / dim.max(1)
            )));
        }
        Ok(Self {
            dim,
            vectors,
            positions,
            frame_ids,
            labels: None,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            positions: Vec::new(),
            frame_ids: Vec::new(),
            labels: None,
        }
    }

    /// Builds a set from `f64` rows (rounded to `f32`).
    pub fn from_rows(rows: &[Vec<f64>], positions: Vec<[f32; 3]>, frame_ids: Vec<u32>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "row of length {} in a set of dimension {dim}",
                bad.len()
            )));
        }
        let vectors = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(dim, vectors, positions, frame_ids)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// `N × D` copy in double precision.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.len(), self.dim, self.vectors.iter().map(|&v| v as f64))
    }

    pub fn positions_f64(&self) -> Vec<[f64; 3]> {
        self.positions
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} descriptors",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Rows at `indices`, in that order. Labels follow along.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            vectors: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            frame_ids: indices.iter().map(|&i| self.frame_ids[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Size in bytes of the `DSC1` encoding.
    pub fn encoded_len(&self) -> usize {
        12 + self.len() * (self.dim * 4 + 12 + 4)
    }
}

pub fn encode_descriptors(set: &DescriptorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(set.encoded_len());
    out.extend_from_slice(&DSC_MAGIC);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in set.positions.iter().flatten() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for id in &set.frame_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::TruncatedFile(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != DSC_MAGIC {
        return Err(Error::BadMagic {
            expected: DSC_MAGIC,
            found: magic,
        });
    }
    let n = cur.u32("row count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    let f32s = |raw: &[u8]| -> Vec<f32> {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let values = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::TruncatedFile(format!("declared size {n}x{dim} overflows")))?;
    let vectors = f32s(cur.take(values, "descriptor payload")?);
    let positions = f32s(cur.take(n * 12, "positions")?)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let frame_ids = cur
        .take(n * 4, "frame ids")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DescriptorSet::new(dim, vectors, positions, frame_ids)
}

pub fn save_descriptors(set: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_descriptors(set)).map_err(|e| Error::io(path, e))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors(&bytes)
}

/// One descriptor per line, comma separated, the last three columns being
/// the position. Frame ids are the line indices.
pub fn read_descriptor_csv<R: std::io::Read>(reader: R) -> Result<DescriptorSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut dim = None;
    let mut vectors = Vec::new();
    let mut positions = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
        let values = record
            .iter()
            .map(|t| {
                t.parse::<f32>()
                    .map_err(|e| Error::MalformedCsv(format!("line {}: {t:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f32>>>()?;
        if values.len() < 4 {
            return Err(Error::MalformedCsv(format!(
                "line {}: need at least one descriptor value and 3 position columns",
                i + 1
            )));
        }
        let d = values.len() - 3;
        if *dim.get_or_insert(d) != d {
            return Err(Error::MalformedCsv(format!(
                "line {}: dimension {d}, earlier lines have {}",
                i + 1,
                dim.unwrap()
            )));
        }
        vectors.extend_from_slice(&values[..d]);
        positions.push([values[d], values[d + 1], values[d + 2]]);
    }
    let frame_ids = (0..positions.len() as u32).collect();
    DescriptorSet::new(dim.unwrap_or(0), vectors, positions, frame_ids)
}

pub fn load_descriptor_csv(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_descriptor_csv(f)
}

/// Yaw-invariant stand-in for a learned global descriptor.
///
/// Each channel is reduced to its column profile (mean of the nonzero pixels
/// in each column), and the magnitudes of the first `target_dim / channels`
/// DFT coefficients of that profile are kept. A circular column shift only
/// changes DFT phases, so the result does not depend on sensor yaw.
pub fn baseline_descriptor(pgv: &PseudoGlobalView, target_dim: usize) -> Result<Vec<f64>> {
    let channels = pgv.len();
    if channels == 0 || target_dim == 0 || !target_dim.is_multiple_of(channels) {
        return Err(Error::DimensionError(format!(
            "target dimension {target_dim} is not a positive multiple of {channels} channels"
        )));
    }
    let per_channel = target_dim / channels;
    let width = pgv.width();
    if per_channel > width {
        return Err(Error::DimensionError(format!(
            "{per_channel} coefficients per channel exceed image width {width}"
        )));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(width);
    let mut out = Vec::with_capacity(target_dim);
    let mut buf = vec![Complex::new(0.0, 0.0); width];
    for ch in &pgv.channels {
        for (col, slot) in buf.iter_mut().enumerate() {
            let (sum, count) = (0..ch.height)
                .map(|row| ch.get(row, col))
                .filter(|&v| v != 0.0)
                .fold((0.0f64, 0usize), |(s, c), v| (s + v as f64, c + 1));
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            *slot = Complex::new(mean, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..per_channel].iter().map(|c| c.norm()));
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Greedy leader clustering in the xy-plane. Positions are visited in order;
/// each joins the first leader within `radius`, or starts a new class.
pub fn assign_place_classes(positions: &[[f64; 3]], radius: f64) -> Result<Vec<usize>> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "class radius {radius} must be positive"
        )));
    }
    let r2 = radius * radius;
    let mut leaders: Vec<[f64; 2]> = Vec::new();
    let labels = positions
        .iter()
        .map(|p| {
            let hit = leaders.iter().position(|l| {
                let (dx, dy) = (p[0] - l[0], p[1] - l[1]);
                dx * dx + dy * dy <= r2
            });
            hit.unwrap_or_else(|| {
                leaders.push([p[0], p[1]]);
                leaders.len() - 1
            })
        })
        .collect();
    Ok(labels)
}
