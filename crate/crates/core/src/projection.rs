//! Range-view / bird's-eye-view projection and the pseudo-global view.
//!
//! Both projections share the azimuth column index so that column `u` of
//! every layer looks in the same direction. RV pixels keep the nearest range
//! (z-buffer), BEV cells keep the highest point. Empty pixels are `0.0`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::scan_io::PointCloud;

/// Points closer than this to the sensor origin are dropped from the RV.
pub const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    /// Degrees.
    pub fov_up: f64,
    /// Degrees, stored positive.
    pub fov_down: f64,
    /// Meters. Also the BEV planar-distance normaliser.
    pub max_range: f64,
    /// Half-open `[low, high)` range bands in meters.
    pub range_intervals: Vec<(f64, f64)>,
    /// Half-open `[low, high)` height bands in meters.
    pub height_intervals: Vec<(f64, f64)>,
}

impl ProjectionConfig {
    /// Velodyne HDL-32E geometry with the NCLT layer bands.
    pub fn nclt() -> Self {
        Self {
            width: 900,
            height: 32,
            fov_up: 30.67,
            fov_down: 10.67,
            max_range: 60.0,
            range_intervals: intervals_from_bounds(&[0.0, 15.0, 30.0, 45.0, 60.0]),
            height_intervals: intervals_from_bounds(&[-4.0, 0.0, 4.0, 8.0, 12.0]),
        }
    }

    /// Velodyne HDL-64E geometry with the KITTI / Ford Campus layer bands.
    pub fn kitti() -> Self {
        Self {
            width: 900,
            height: 64,
            fov_up: 3.0,
            fov_down: 25.0,
            max_range: 80.0,
            range_intervals: intervals_from_bounds(&[0.0, 20.0, 40.0, 60.0, 80.0]),
            height_intervals: intervals_from_bounds(&[-3.0, -1.5, 0.0, 1.5, 5.0]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} must be positive", self.width, self.height));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad(format!("max_range {} must be positive", self.max_range));
        }
        if (self.fov_up + self.fov_down).is_nan() || self.fov_up + self.fov_down <= 0.0 {
            return bad(format!(
                "vertical field of view {} + {} must be positive",
                self.fov_up, self.fov_down
            ));
        }
        check_intervals("range", &self.range_intervals)?;
        check_intervals("height", &self.height_intervals)
    }

    /// Layers per modality: one per interval plus the full view.
    pub fn layers_per_view(&self) -> (usize, usize) {
        (self.height_intervals.len() + 1, self.range_intervals.len() + 1)
    }

    pub fn channel_count(&self) -> usize {
        let (b, r) = self.layers_per_view();
        b + r
    }
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::nclt()
    }
}

/// `[b0, b1, ..., bq]` → `[(b0,b1), (b1,b2), ...]`.
pub fn intervals_from_bounds(bounds: &[f64]) -> Vec<(f64, f64)> {
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Index of the half-open interval containing `value`.
pub fn interval_index(value: f64, intervals: &[(f64, f64)]) -> Option<usize> {
    intervals.iter().position(|&(lo, hi)| value >= lo && value < hi)
}

fn check_intervals(name: &str, intervals: &[(f64, f64)]) -> Result<()> {
    for &(lo, hi) in intervals {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "{name} interval [{lo}, {hi}) is empty or not finite"
            )));
        }
    }
    if let Some(w) = intervals.windows(2).find(|w| w[0].1 != w[1].0) {
        return Err(Error::InvalidConfig(format!(
            "{name} intervals not contiguous: [{}, {}) then [{}, {})",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Range,
    BirdsEye,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerTag {
    Interval(f64, f64),
    Full,
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::Interval(lo, hi) => write!(f, "[{lo},{hi})"),
            LayerTag::Full => f.write_str("FULL"),
        }
    }
}

/// Row-major `height × width` image in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub kind: ViewKind,
    pub layer: LayerTag,
}

impl ViewImage {
    pub fn zeros(width: usize, height: usize, kind: ViewKind, layer: LayerTag) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            kind,
            layer,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Binary PGM (P5), 16-bit big-endian, 256 counts per meter. Values
    /// outside `[0, 255.99]` m are clamped.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.values.len() * 2);
        for &v in &self.values {
            let counts = (v as f64 * 256.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&counts.to_be_bytes());
        }
        out.write_all(&buf)
    }
}

/// Shared azimuth column: `⌊½(1 − atan2(y, x)/π)·w⌋ mod w`.
pub fn azimuth_column(x: f64, y: f64, width: usize) -> usize {
    let u = (0.5 * (1.0 - y.atan2(x) / PI) * width as f64).floor() as i64;
    u.rem_euclid(width as i64) as usize
}

fn clamp_row(v: f64, height: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v.floor() as usize).min(height - 1)
    }
}

/// RV pixel `(row, col, range)` of a point, or `None` when it is skipped.
pub fn rv_pixel(xyz: [f64; 3], cfg: &ProjectionConfig) -> Option<(usize, usize, f64)> {
    let [x, y, z] = xyz;
    let r = (x * x + y * y + z * z).sqrt();
    if r <= MIN_RANGE || r > cfg.max_range {
        return None;
    }
    let u = azimuth_column(x, y, cfg.width);
    // Evaluated in degrees so that configured angles divide exactly.
    let pitch = (z / r).clamp(-1.0, 1.0).asin().to_degrees();
    let fov = cfg.fov_up + cfg.fov_down;
    let v = (1.0 - (pitch + cfg.fov_up) / fov) * cfg.height as f64;
    Some((clamp_row(v, cfg.height), u, r))
}

/// BEV cell `(row, col, height)` of a point, or `None` when it is skipped.
pub fn bev_pixel(xyz: [f64; 3], cfg: &ProjectionConfig) -> Option<(usize, usize, f64)> {
    let [x, y, z] = xyz;
    let planar = (x * x + y * y).sqrt();
    if planar > cfg.max_range {
        return None;
    }
    let u = azimuth_column(x, y, cfg.width);
    let v = planar / cfg.max_range * cfg.height as f64;
    Some((clamp_row(v, cfg.height), u, z))
}

fn project_rv_where(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
    layer: LayerTag,
    keep: impl Fn(f64) -> bool,
) -> ViewImage {
    let mut img = ViewImage::zeros(cfg.width, cfg.height, ViewKind::Range, layer);
    for p in &cloud.points {
        let Some((row, col, r)) = rv_pixel(p.xyz(), cfg) else {
            continue;
        };
        if !keep(r) {
            continue;
        }
        let px = &mut img.values[row * cfg.width + col];
        let r = r as f32;
        if *px == 0.0 || r < *px {
            *px = r;
        }
    }
    img
}

fn project_bev_where(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
    layer: LayerTag,
    keep: impl Fn(f64) -> bool,
) -> ViewImage {
    let mut img = ViewImage::zeros(cfg.width, cfg.height, ViewKind::BirdsEye, layer);
    // Heights may be negative, so occupancy is tracked apart from the value.
    let mut occupied = vec![false; cfg.width * cfg.height];
    for p in &cloud.points {
        let Some((row, col, z)) = bev_pixel(p.xyz(), cfg) else {
            continue;
        };
        if !keep(z) {
            continue;
        }
        let idx = row * cfg.width + col;
        let z = z as f32;
        if !occupied[idx] || z > img.values[idx] {
            img.values[idx] = z;
            occupied[idx] = true;
        }
    }
    img
}

pub fn project_rv(cloud: &PointCloud, cfg: &ProjectionConfig) -> ViewImage {
    project_rv_where(cloud, cfg, LayerTag::Full, |_| true)
}

pub fn project_bev(cloud: &PointCloud, cfg: &ProjectionConfig) -> ViewImage {
    project_bev_where(cloud, cfg, LayerTag::Full, |_| true)
}

/// One RV image per range interval, followed by the full RV.
pub fn multilayer_rv(cloud: &PointCloud, cfg: &ProjectionConfig) -> Vec<ViewImage> {
    let mut layers: Vec<ViewImage> = cfg
        .range_intervals
        .iter()
        .map(|&(lo, hi)| {
            project_rv_where(cloud, cfg, LayerTag::Interval(lo, hi), |r| r >= lo && r < hi)
        })
        .collect();
    layers.push(project_rv(cloud, cfg));
    layers
}

/// One BEV image per height interval, followed by the full BEV.
pub fn multilayer_bev(cloud: &PointCloud, cfg: &ProjectionConfig) -> Vec<ViewImage> {
    let mut layers: Vec<ViewImage> = cfg
        .height_intervals
        .iter()
        .map(|&(lo, hi)| {
            project_bev_where(cloud, cfg, LayerTag::Interval(lo, hi), |z| z >= lo && z < hi)
        })
        .collect();
    layers.push(project_bev(cloud, cfg));
    layers
}

/// Channel stack `[B_1..B_q, R_1..R_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGlobalView {
    pub channels: Vec<ViewImage>,
}

impl PseudoGlobalView {
    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// All channels stacked top to bottom as one PGM.
    pub fn write_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut stacked = ViewImage::zeros(w, h * self.len(), ViewKind::Range, LayerTag::Full);
        for (c, ch) in self.channels.iter().enumerate() {
            stacked.values[c * h * w..(c + 1) * h * w].copy_from_slice(&ch.values);
        }
        stacked.write_pgm(out)
    }
}

pub fn build_pgv(bev_layers: Vec<ViewImage>, rv_layers: Vec<ViewImage>) -> Result<PseudoGlobalView> {
    if bev_layers.is_empty() || rv_layers.is_empty() {
        return Err(Error::ShapeMismatch(
            "pseudo-global view needs at least one BEV and one RV layer".into(),
        ));
    }
    if bev_layers.len() != rv_layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} BEV layers vs {} RV layers",
            bev_layers.len(),
            rv_layers.len()
        )));
    }
    let shape = bev_layers[0].shape();
    if let Some(bad) = bev_layers.iter().chain(&rv_layers).find(|l| l.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "layer {} {:?} has shape {:?}, expected {:?}",
            bad.layer,
            bad.kind,
            bad.shape(),
            shape
        )));
    }
    let mut channels = bev_layers;
    channels.extend(rv_layers);
    Ok(PseudoGlobalView { channels })
}

pub fn pseudo_global_view(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<PseudoGlobalView> {
    cfg.validate()?;
    build_pgv(multilayer_bev(cloud, cfg), multilayer_rv(cloud, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan_io::Point;

    fn cloud(pts: &[[f32; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect(), 0)
    }

    fn hand_cfg() -> ProjectionConfig {
        ProjectionConfig {
            width: 900,
            height: 32,
            fov_up: 30.0,
            fov_down: 10.0,
            max_range: 60.0,
            ..ProjectionConfig::nclt()
        }
    }

    #[test]
    fn rv_axis_aligned_points() {
        let cfg = hand_cfg();
        let img = project_rv(&cloud(&[[10.0, 0.0, 0.0]]), &cfg);
        assert_eq!(img.get(8, 450), 10.0);
        assert_eq!(img.nonzero_count(), 1);

        let img = project_rv(&cloud(&[[0.0, 10.0, 0.0]]), &cfg);
        assert_eq!(img.get(8, 225), 10.0);
    }

    #[test]
    fn rv_keeps_nearest() {
        let img = project_rv(&cloud(&[[7.0, 0.0, 0.0], [5.0, 0.0, 0.0]]), &hand_cfg());
        assert_eq!(img.get(8, 450), 5.0);
    }

    #[test]
    fn rv_skips_origin_and_far_points() {
        let img = project_rv(&cloud(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]), &hand_cfg());
        assert_eq!(img.nonzero_count(), 0);
    }

    #[test]
    fn bev_hand_cases() {
        let cfg = hand_cfg();
        let img = project_bev(&cloud(&[[3.0, 4.0, 1.0]]), &cfg);
        let col = azimuth_column(3.0, 4.0, 900);
        assert_eq!(img.get(2, col), 1.0);

        let img = project_bev(&cloud(&[[3.0, 4.0, 0.5], [3.0, 4.0, 2.0]]), &cfg);
        assert_eq!(img.get(2, col), 2.0);

        let img = project_bev(&cloud(&[[100.0, 0.0, 0.0]]), &cfg);
        assert_eq!(img.nonzero_count(), 0);
    }

    #[test]
    fn bev_negative_height_survives() {
        let img = project_bev(&cloud(&[[3.0, 4.0, -1.5], [3.0, 4.0, -2.5]]), &hand_cfg());
        assert_eq!(img.get(2, azimuth_column(3.0, 4.0, 900)), -1.5);
    }

    #[test]
    fn seam_maps_into_range() {
        // atan2(-0, -1) = -π lands exactly on u = w.
        assert_eq!(azimuth_column(-1.0, -0.0, 900), 0);
        assert_eq!(azimuth_column(-1.0, 0.0, 900), 0);
    }

    #[test]
    fn planar_distance_at_max_range_clamps() {
        let img = project_bev(&cloud(&[[60.0, 0.0, 1.0]]), &hand_cfg());
        assert_eq!(img.get(31, 450), 1.0);
    }

    #[test]
    fn layer_counts_and_boundaries() {
        let cfg = ProjectionConfig::nclt();
        let c = cloud(&[[15.0, 0.0, 0.0]]);
        let rv = multilayer_rv(&c, &cfg);
        assert_eq!(rv.len(), 5);
        let hits: Vec<usize> = rv.iter().map(|l| l.nonzero_count()).collect();
        assert_eq!(hits, vec![0, 1, 0, 0, 1]);
        assert_eq!(rv[4].layer, LayerTag::Full);

        let bev = multilayer_bev(&cloud(&[[5.0, 0.0, -5.0]]), &cfg);
        assert_eq!(bev.len(), 5);
        assert_eq!(bev.iter().map(|l| l.nonzero_count()).collect::<Vec<_>>(), vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn zero_height_point_lands_in_upper_band() {
        // z = 0 is stored as 0.0 and reads as empty; check the band choice.
        let cfg = ProjectionConfig::nclt();
        assert_eq!(interval_index(0.0, &cfg.height_intervals), Some(1));
        assert_eq!(interval_index(-5.0, &cfg.height_intervals), None);
        assert_eq!(interval_index(15.0, &cfg.range_intervals), Some(1));
        assert_eq!(interval_index(60.0, &cfg.range_intervals), None);
    }

    #[test]
    fn empty_cloud_all_zero() {
        let cfg = ProjectionConfig::nclt();
        let pgv = pseudo_global_view(&PointCloud::default(), &cfg).unwrap();
        assert_eq!(pgv.len(), 10);
        assert!(pgv.channels.iter().all(|c| c.nonzero_count() == 0));
    }

    #[test]
    fn pgv_ordering() {
        let cfg = ProjectionConfig::nclt();
        let c = cloud(&[[10.0, 3.0, 1.0]]);
        let pgv = build_pgv(multilayer_bev(&c, &cfg), multilayer_rv(&c, &cfg)).unwrap();
        assert_eq!(pgv.len(), 10);
        assert_eq!(pgv.channels[0].kind, ViewKind::BirdsEye);
        assert_eq!(pgv.channels[0].layer, LayerTag::Interval(-4.0, 0.0));
        assert_eq!(pgv.channels[5].kind, ViewKind::Range);
        assert_eq!(pgv.channels[5].layer, LayerTag::Interval(0.0, 15.0));
    }

    #[test]
    fn pgv_single_layer_each() {
        let b = ViewImage::zeros(4, 2, ViewKind::BirdsEye, LayerTag::Full);
        let r = ViewImage::zeros(4, 2, ViewKind::Range, LayerTag::Full);
        assert_eq!(build_pgv(vec![b], vec![r]).unwrap().len(), 2);
    }

    #[test]
    fn pgv_shape_mismatch() {
        let b = ViewImage::zeros(4, 2, ViewKind::BirdsEye, LayerTag::Full);
        let r = ViewImage::zeros(4, 3, ViewKind::Range, LayerTag::Full);
        assert!(matches!(build_pgv(vec![b], vec![r]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::nclt().validate().is_ok());
        assert!(ProjectionConfig::kitti().validate().is_ok());
        let mut cfg = ProjectionConfig::nclt();
        cfg.range_intervals = vec![(0.0, 15.0), (16.0, 30.0)];
        assert!(cfg.validate().is_err());
        let mut cfg = ProjectionConfig::nclt();
        cfg.width = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProjectionConfig::nclt();
        cfg.fov_up = -20.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pgm_header_and_payload() {
        let mut img = ViewImage::zeros(2, 1, ViewKind::Range, LayerTag::Full);
        img.values = vec![1.0, 300.0];
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[1, 0, 255, 255]);
    }
}
