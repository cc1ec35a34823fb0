//! KITTI-layout scan and pose ingestion.
//!
//! A scan file is a headerless stream of little-endian `f32` quadruples
//! `(x, y, z, intensity)`. A pose file holds one row-major 3×4 `[R | t]`
//! matrix per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;
const ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Carried for format fidelity, never used downstream.
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: u32,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_id: u32) -> Self {
        Self { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub timestamp: Option<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            timestamp: None,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Largest entry of `RᵀR − I` in absolute value.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// Position of the sensor in the world frame.
pub fn scan_position(pose: &Pose) -> Vector3<f64> {
    pose.translation
}

/// Decodes a scan from raw bytes. `path` only labels errors.
pub fn decode_kitti_scan(bytes: &[u8], frame_id: u32, path: &Path) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::MalformedScan {
            path: path.to_path_buf(),
            reason: format!(
                "byte length {} is not a multiple of {RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::MalformedScan {
                path: path.to_path_buf(),
                reason: format!("point {i} has a non-finite coordinate"),
            });
        }
        points.push(p);
    }
    Ok(PointCloud { points, frame_id })
}

pub fn read_kitti_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kitti_scan(&bytes, frame_id_from_path(path).unwrap_or(0), path)
}

pub fn encode_kitti_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_kitti_scan(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_kitti_scan(cloud))
        .map_err(|e| Error::io(path, e))
}

/// Parses pose text. Poses carry no timestamp in this layout, so the line's
/// frame index stands in as the timestamp.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::MalformedPose {
                line: line_no,
                reason: format!("expected 12 tokens, found {}", tokens.len()),
            });
        }
        let mut m = [0.0f64; 12];
        for (slot, tok) in m.iter_mut().zip(&tokens) {
            *slot = tok.parse::<f64>().map_err(|e| Error::MalformedPose {
                line: line_no,
                reason: format!("cannot parse {tok:?}: {e}"),
            })?;
            if !slot.is_finite() {
                return Err(Error::MalformedPose {
                    line: line_no,
                    reason: format!("non-finite value {tok:?}"),
                });
            }
        }
        let pose = Pose {
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
            timestamp: Some(poses.len() as f64),
        };
        let err = pose.orthonormality_error();
        if err > ORTHONORMAL_TOL {
            return Err(Error::MalformedPose {
                line: line_no,
                reason: format!("rotation is not orthonormal (|RᵀR − I| = {err:e})"),
            });
        }
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

/// Frame index from a file stem such as `000042.bin`.
pub fn frame_id_from_path(path: &Path) -> Option<u32> {
    path.file_stem()?.to_str()?.parse().ok()
}

#[derive(Debug, Clone)]
pub struct ScanSequence {
    pub scan_paths: Vec<PathBuf>,
    pub frame_ids: Vec<u32>,
    pub poses: Vec<Pose>,
}

impl ScanSequence {
    pub fn new(scan_paths: Vec<PathBuf>, frame_ids: Vec<u32>, poses: Vec<Pose>) -> Result<Self> {
        if scan_paths.len() != poses.len() || frame_ids.len() != poses.len() {
            return Err(Error::InvalidSequence(format!(
                "{} scans, {} frame ids, {} poses",
                scan_paths.len(),
                frame_ids.len(),
                poses.len()
            )));
        }
        if let Some(w) = frame_ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSequence(format!(
                "frame ids not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            scan_paths,
            frame_ids,
            poses,
        })
    }

    /// Collects `*.bin` files from `scan_dir` and pairs them with the poses
    /// in `pose_file`. Numeric stems index into the pose list; otherwise the
    /// sorted file order is used.
    pub fn from_dir(scan_dir: impl AsRef<Path>, pose_file: impl AsRef<Path>) -> Result<Self> {
        let scan_dir = scan_dir.as_ref();
        let poses = read_pose_file(pose_file)?;
        let mut paths: Vec<PathBuf> = fs::read_dir(scan_dir)
            .map_err(|e| Error::io(scan_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
            .collect();
        paths.sort();

        let numeric: Option<Vec<u32>> = paths.iter().map(|p| frame_id_from_path(p)).collect();
        let frame_ids = match numeric {
            Some(mut ids) => {
                let mut order: Vec<usize> = (0..paths.len()).collect();
                order.sort_by_key(|&i| ids[i]);
                paths = order.iter().map(|&i| paths[i].clone()).collect();
                ids.sort_unstable();
                ids
            }
            None => (0..paths.len() as u32).collect(),
        };
        let poses = frame_ids
            .iter()
            .map(|&id| {
                poses.get(id as usize).cloned().ok_or_else(|| {
                    Error::InvalidSequence(format!(
                        "scan {id} has no pose ({} poses available)",
                        poses.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(paths, frame_ids, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn read_scan(&self, i: usize) -> Result<PointCloud> {
        let mut cloud = read_kitti_scan(&self.scan_paths[i])?;
        cloud.frame_id = self.frame_ids[i];
        Ok(cloud)
    }
}
