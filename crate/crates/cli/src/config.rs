//! Flat `key = value` pipeline configuration.
//!
//! Keys are dotted (`projection.w`, `mapvlm.d1`, ...), `#` starts a comment,
//! blank lines are ignored. Overrides given on the command line replace file
//! values. Relative paths in a config file are resolved against the file's
//! directory; paths given as overrides are taken as they are.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lpr_core::evaluation::{DEFAULT_EXCLUSION_FRAMES, LOOP_GT_RADIUS, PLACE_GT_RADIUS};
use lpr_core::mapvlm::MapvlmConfig;
use lpr_core::projection::{intervals_from_bounds, ProjectionConfig};

pub const DEFAULT_TARGET_DIM: usize = lpr_core::descriptor_store::DEFAULT_DESCRIPTOR_DIM;
pub const DEFAULT_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorSource {
    /// Hand-crafted descriptors computed from the scans.
    Baseline,
    /// A CSV or DSC1 file produced elsewhere.
    External,
}

impl FromStr for DescriptorSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "external" => Ok(Self::External),
            other => bail!("descriptor.source must be baseline or external, got {other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Query and database are different traversals.
    Place,
    /// Query and database are the same trajectory.
    Loop,
}

impl FromStr for EvalMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "place" => Ok(Self::Place),
            "loop" => Ok(Self::Loop),
            other => bail!("mode must be place or loop, got {other:?}"),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Place => "place",
            Self::Loop => "loop",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scan_dir: Option<PathBuf>,
    pub pose_file: Option<PathBuf>,
    pub projection: ProjectionConfig,
    pub descriptor_source: DescriptorSource,
    pub descriptor_path: Option<PathBuf>,
    /// `None` picks a default suited to the descriptor source.
    pub target_dim: Option<usize>,
    pub mapvlm: MapvlmConfig,
    pub class_radius: f64,
    /// `None` uses the mode's default radius.
    pub gt_radius: Option<f64>,
    pub exclusion_frames: u32,
    pub margin: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scan_dir: None,
            pose_file: None,
            projection: ProjectionConfig::nclt(),
            descriptor_source: DescriptorSource::Baseline,
            descriptor_path: None,
            target_dim: None,
            mapvlm: MapvlmConfig::default(),
            class_radius: lpr_core::descriptor_store::DEFAULT_CLASS_RADIUS,
            gt_radius: None,
            exclusion_frames: DEFAULT_EXCLUSION_FRAMES,
            margin: DEFAULT_MARGIN,
            output_dir: None,
        }
    }
}

/// Splits config text into `(line, key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got {raw:?}", i + 1);
        };
        let key = key.trim();
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        entries.push((i + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

/// `"0, 15, 30"` → `[0.0, 15.0, 30.0]`.
fn parse_bounds(key: &str, value: &str) -> Result<Vec<(f64, f64)>> {
    let bounds = value
        .split(',')
        .map(|t| parse::<f64>(key, t.trim()))
        .collect::<Result<Vec<f64>>>()?;
    if bounds.len() < 2 {
        bail!("{key}: need at least two bounds, got {value:?}");
    }
    Ok(intervals_from_bounds(&bounds))
}

impl PipelineConfig {
    /// Reads a config file, applies `overrides` (`key=value`) on top and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries: Vec<(String, String, Option<PathBuf>)> = Vec::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf);
            for (_, k, v) in parse_entries(&text).with_context(|| format!("in {}", path.display()))? {
                entries.push((k, v, base.clone()));
            }
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("override {o:?} is not `key=value`");
            };
            entries.push((k.trim().to_string(), v.trim().to_string(), None));
        }
        let cfg = Self::from_entries(&entries)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a config from ordered entries; later keys win. A projection
    /// preset is applied before any individual projection key regardless of
    /// where it appears.
    pub fn from_entries(entries: &[(String, String, Option<PathBuf>)]) -> Result<Self> {
        let mut latest: BTreeMap<&str, (&str, Option<&Path>)> = BTreeMap::new();
        for (k, v, base) in entries {
            latest.insert(k.as_str(), (v.as_str(), base.as_deref()));
        }
        let mut cfg = Self::default();
        if let Some((preset, _)) = latest.remove("projection.preset") {
            cfg.projection = match preset {
                "nclt" => ProjectionConfig::nclt(),
                "kitti" => ProjectionConfig::kitti(),
                other => bail!("projection.preset must be nclt or kitti, got {other:?}"),
            };
        }
        for (key, (value, base)) in latest {
            cfg.set(key, value, base)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path = || -> PathBuf {
            let p = PathBuf::from(value);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "dataset.scan_dir" => self.scan_dir = Some(path()),
            "dataset.pose_file" => self.pose_file = Some(path()),
            "projection.w" => self.projection.width = parse(key, value)?,
            "projection.h" => self.projection.height = parse(key, value)?,
            "projection.fov_up" => self.projection.fov_up = parse(key, value)?,
            "projection.fov_down" => self.projection.fov_down = parse(key, value)?,
            "projection.max_range" => self.projection.max_range = parse(key, value)?,
            "projection.range_intervals" => self.projection.range_intervals = parse_bounds(key, value)?,
            "projection.height_intervals" => self.projection.height_intervals = parse_bounds(key, value)?,
            "descriptor.source" => self.descriptor_source = value.parse()?,
            "descriptor.path" => self.descriptor_path = Some(path()),
            "descriptor.target_dim" => self.target_dim = Some(parse(key, value)?),
            "mapvlm.d1" => self.mapvlm.d1 = parse(key, value)?,
            "mapvlm.d2" => self.mapvlm.d2 = parse(key, value)?,
            "mapvlm.k_neighbor" => self.mapvlm.k_neighbor = parse(key, value)?,
            "mapvlm.reg_epsilon_scale" => self.mapvlm.reg_epsilon_scale = parse(key, value)?,
            "mapvlm.min_class_size" => self.mapvlm.min_class_size = parse(key, value)?,
            "classes.radius" => self.class_radius = parse(key, value)?,
            "eval.gt_radius" => self.gt_radius = Some(parse(key, value)?),
            "eval.exclusion_frames" => self.exclusion_frames = parse(key, value)?,
            "triplet.margin" => self.margin = parse(key, value)?,
            "output.dir" => self.output_dir = Some(path()),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Field-level checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<()> {
        self.projection.validate().context("projection settings")?;
        for (key, p) in [
            ("dataset.scan_dir", &self.scan_dir),
            ("dataset.pose_file", &self.pose_file),
            ("descriptor.path", &self.descriptor_path),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{key}: {} does not exist", p.display());
                }
            }
        }
        if self.target_dim == Some(0) {
            bail!("descriptor.target_dim must be positive");
        }
        if self.class_radius.is_nan() || self.class_radius <= 0.0 {
            bail!("classes.radius {} must be positive", self.class_radius);
        }
        if let Some(r) = self.gt_radius {
            if r.is_nan() || r <= 0.0 {
                bail!("eval.gt_radius {r} must be positive");
            }
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            bail!("triplet.margin {} must be nonnegative", self.margin);
        }
        if self.mapvlm.k_neighbor == 0 {
            bail!("mapvlm.k_neighbor must be at least 1");
        }
        if !(1 <= self.mapvlm.d2 && self.mapvlm.d2 <= self.mapvlm.d1) {
            bail!("need 1 <= mapvlm.d2 ({}) <= mapvlm.d1 ({})", self.mapvlm.d2, self.mapvlm.d1);
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .context("no output directory: set output.dir or pass --out")
    }

    pub fn pose_file(&self) -> Result<&Path> {
        self.pose_file.as_deref().context("dataset.pose_file is not set")
    }

    pub fn scan_dir(&self) -> Result<&Path> {
        self.scan_dir.as_deref().context("dataset.scan_dir is not set")
    }

    pub fn gt_radius_for(&self, mode: EvalMode) -> f64 {
        self.gt_radius.unwrap_or(match mode {
            EvalMode::Place => PLACE_GT_RADIUS,
            EvalMode::Loop => LOOP_GT_RADIUS,
        })
    }

    /// Baseline descriptors must split evenly across the view channels, so
    /// their default is the largest such size not above the usual 768.
    pub fn baseline_target_dim(&self) -> usize {
        let channels = self.projection.channel_count();
        self.target_dim
            .unwrap_or((DEFAULT_TARGET_DIM / channels).max(1) * channels)
    }

    pub fn external_target_dim(&self) -> usize {
        self.target_dim.unwrap_or(DEFAULT_TARGET_DIM)
    }
}
