//! The pipeline subcommands. Each reads its inputs, writes under the output
//! directory and returns a summary for the caller to print.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use lpr_core::descriptor_store::{
    assign_place_classes, baseline_descriptor, load_descriptor_csv, load_descriptors,
    save_descriptors, DescriptorSet,
};
use lpr_core::evaluation::{
    build_ground_truth, one_percent_cutoff, EvalReport, GroundTruthParams, AR_AT,
};
use lpr_core::mapvlm::{fit_with_summary, load_model, save_model, MetricModel};
use lpr_core::metric_index::{build_index, MetricIndex, Neighbor};
use lpr_core::projection::pseudo_global_view;
use lpr_core::scan_io::{read_pose_file, scan_position, ScanSequence};
use lpr_core::triplet::triplet_loss_from_distances;
use rayon::prelude::*;

use crate::config::{DescriptorSource, EvalMode, PipelineConfig};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PGV_DIR: &str = "pgv";
pub const DESCRIPTOR_FILE: &str = "descriptors.dsc";
pub const MODEL_FILE: &str = "model.spd";
pub const TRIPLET_FILE: &str = "triplets.csv";

fn prepare_output(cfg: &PipelineConfig) -> Result<PathBuf> {
    let out = cfg.output_dir()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn open_sequence(cfg: &PipelineConfig) -> Result<ScanSequence> {
    let pose_file = cfg.pose_file()?;
    let scan_dir = cfg.scan_dir()?;
    // Poses are parsed before any scan is touched.
    read_pose_file(pose_file).with_context(|| format!("pose file {}", pose_file.display()))?;
    ScanSequence::from_dir(scan_dir, pose_file)
        .with_context(|| format!("scan directory {}", scan_dir.display()))
}

/// Loads a descriptor file, CSV when the extension says so, DSC1 otherwise.
pub fn load_any_descriptors(path: &Path) -> Result<DescriptorSet> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let set = if is_csv {
        load_descriptor_csv(path)
    } else {
        load_descriptors(path)
    };
    set.with_context(|| format!("descriptor file {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectSummary {
    pub scans: usize,
    pub manifest: PathBuf,
}

impl fmt::Display for ProjectSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "projected {} scans; manifest {}", self.scans, self.manifest.display())
    }
}

/// Writes one stacked PGM per scan and a `frame_id,scan,pgv` manifest. Rows
/// are flushed as they are produced, so a failure part way through leaves
/// everything before it on disk.
pub fn cmd_project(cfg: &PipelineConfig) -> Result<ProjectSummary> {
    let seq = open_sequence(cfg)?;
    let out = prepare_output(cfg)?;
    let pgv_dir = out.join(PGV_DIR);
    fs::create_dir_all(&pgv_dir).with_context(|| format!("creating {}", pgv_dir.display()))?;
    let manifest = out.join(MANIFEST_FILE);
    let mut rows = csv::Writer::from_path(&manifest)
        .with_context(|| format!("creating {}", manifest.display()))?;
    rows.write_record(["frame_id", "scan", "pgv"])?;
    rows.flush()?;
    for i in 0..seq.len() {
        let scan = &seq.scan_paths[i];
        let cloud = seq.read_scan(i).with_context(|| format!("scan {}", scan.display()))?;
        let pgv = pseudo_global_view(&cloud, &cfg.projection)
            .with_context(|| format!("projecting {}", scan.display()))?;
        let image = pgv_dir.join(format!("{:06}.pgm", seq.frame_ids[i]));
        let mut w = BufWriter::new(
            File::create(&image).with_context(|| format!("creating {}", image.display()))?,
        );
        pgv.write_pgm(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", image.display()))?;
        rows.write_record([
            seq.frame_ids[i].to_string(),
            scan.display().to_string(),
            image.display().to_string(),
        ])?;
        rows.flush()?;
    }
    info!("projected {} scans into {}", seq.len(), pgv_dir.display());
    Ok(ProjectSummary {
        scans: seq.len(),
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescribeSummary {
    pub count: usize,
    pub dim: usize,
    pub path: PathBuf,
}

impl fmt::Display for DescribeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} descriptors of dimension {} to {}",
            self.count,
            self.dim,
            self.path.display()
        )
    }
}

/// Produces `descriptors.dsc`, either by computing baseline descriptors from
/// the scans or by importing an external file.
pub fn cmd_describe(cfg: &PipelineConfig) -> Result<DescribeSummary> {
    let set = match cfg.descriptor_source {
        DescriptorSource::Baseline => baseline_set(cfg)?,
        DescriptorSource::External => external_set(cfg)?,
    };
    let out = prepare_output(cfg)?;
    let path = out.join(DESCRIPTOR_FILE);
    save_descriptors(&set, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(DescribeSummary {
        count: set.len(),
        dim: set.dim(),
        path,
    })
}

fn baseline_set(cfg: &PipelineConfig) -> Result<DescriptorSet> {
    let seq = open_sequence(cfg)?;
    let target = cfg.baseline_target_dim();
    let rows = (0..seq.len())
        .into_par_iter()
        .map(|i| {
            let scan = &seq.scan_paths[i];
            let cloud = seq.read_scan(i).with_context(|| format!("scan {}", scan.display()))?;
            let pgv = pseudo_global_view(&cloud, &cfg.projection)?;
            baseline_descriptor(&pgv, target).with_context(|| format!("describing {}", scan.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let positions = seq.poses.iter().map(position_f32).collect();
    Ok(DescriptorSet::from_rows(&rows, positions, seq.frame_ids.clone())?)
}

fn position_f32(pose: &lpr_core::scan_io::Pose) -> [f32; 3] {
    let t = scan_position(pose);
    [t.x as f32, t.y as f32, t.z as f32]
}

fn external_set(cfg: &PipelineConfig) -> Result<DescriptorSet> {
    let path = cfg
        .descriptor_path
        .as_deref()
        .context("descriptor.source = external needs descriptor.path")?;
    let mut set = load_any_descriptors(path)?;
    let expected = cfg.external_target_dim();
    if set.dim() != expected && !set.is_empty() {
        bail!(
            "{}: descriptors have dimension {}, configuration expects {expected}",
            path.display(),
            set.dim()
        );
    }
    if let Some(pose_file) = &cfg.pose_file {
        let poses = read_pose_file(pose_file)
            .with_context(|| format!("pose file {}", pose_file.display()))?;
        set.positions = set
            .frame_ids
            .iter()
            .map(|&id| {
                poses.get(id as usize).map(position_f32).with_context(|| {
                    format!("frame {id} has no pose in {}", pose_file.display())
                })
            })
            .collect::<Result<_>>()?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub samples_used: usize,
    pub samples_dropped: usize,
    pub classes_used: usize,
    pub classes_dropped: usize,
    pub top_eigenvalues: Vec<f64>,
    pub pca_energy_fraction: Option<f64>,
    pub model_path: PathBuf,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "classes: {} used, {} dropped; samples: {} used, {} dropped",
            self.classes_used, self.classes_dropped, self.samples_used, self.samples_dropped
        )?;
        let top: Vec<String> = self.top_eigenvalues.iter().map(|v| format!("{v:.6e}")).collect();
        writeln!(f, "top eigenvalues: {}", top.join(" "))?;
        match self.pca_energy_fraction {
            Some(e) => writeln!(f, "PCA energy retained: {e:.6}")?,
            None => writeln!(f, "PCA energy retained: n/a")?,
        }
        write!(f, "model written to {}", self.model_path.display())
    }
}

/// Assigns place classes from positions, fits the metric and writes
/// `model.spd`.
pub fn cmd_fit_metric(cfg: &PipelineConfig, descriptors: Option<&Path>) -> Result<FitReport> {
    let out = prepare_output(cfg)?;
    let input = descriptors.map_or_else(|| out.join(DESCRIPTOR_FILE), Path::to_path_buf);
    let set = load_any_descriptors(&input)?;
    let labels = assign_place_classes(&set.positions_f64(), cfg.class_radius)?;
    let sizes = class_size_histogram(&labels);
    let set = set.with_labels(labels)?;
    let (model, summary) = fit_with_summary(&set, &cfg.mapvlm).with_context(|| {
        format!(
            "fitting {} descriptors from {} in {} classes (class size: count = {})",
            set.len(),
            input.display(),
            sizes.values().sum::<usize>(),
            sizes
                .iter()
                .map(|(size, n)| format!("{size}: {n}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
    })?;
    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    Ok(FitReport {
        samples_used: summary.samples_used,
        samples_dropped: summary.samples_dropped,
        classes_used: summary.classes_used,
        classes_dropped: summary.classes_dropped,
        top_eigenvalues: model.lfda_eigenvalues().iter().take(5).copied().collect(),
        pca_energy_fraction: model.pca_energy_fraction(summary.total_variance),
        model_path,
    })
}

/// Class size → number of classes of that size.
fn class_size_histogram(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *per_class.entry(l).or_default() += 1;
    }
    let mut hist = BTreeMap::new();
    for size in per_class.into_values() {
        *hist.entry(size).or_default() += 1;
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricChoice {
    Mapvlm,
    Euclidean,
}

impl std::str::FromStr for MetricChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapvlm" => Ok(Self::Mapvlm),
            "euclidean" => Ok(Self::Euclidean),
            other => bail!("metric must be mapvlm or euclidean, got {other:?}"),
        }
    }
}

impl fmt::Display for MetricChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mapvlm => "mapvlm",
            Self::Euclidean => "euclidean",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub query: PathBuf,
    pub db: PathBuf,
    /// Defaults to `model.spd` in the output directory.
    pub model: Option<PathBuf>,
    pub mode: EvalMode,
    pub metric: MetricChoice,
    /// Also write the ranked lists as `query_id,rank,frame_id,distance`.
    pub write_results: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub pr_path: PathBuf,
    pub results_path: Option<PathBuf>,
}

impl fmt::Display for EvaluateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}report written to {}", self.report.to_text(), self.report_path.display())
    }
}

/// Retrieves every query against the database and scores the rankings.
pub fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<EvaluateOutcome> {
    let out = prepare_output(cfg)?;
    let query = load_any_descriptors(&args.query)?;
    let db = load_any_descriptors(&args.db)?;
    let model = match args.metric {
        MetricChoice::Euclidean => MetricModel::identity(db.dim()),
        MetricChoice::Mapvlm => {
            let path = args.model.clone().unwrap_or_else(|| out.join(MODEL_FILE));
            load_model(&path).with_context(|| format!("model file {}", path.display()))?
        }
    };
    for (set, path) in [(&db, &args.db), (&query, &args.query)] {
        if set.dim() != model.dim() && !set.is_empty() {
            bail!(
                "{}: descriptors have dimension {}, metric expects {}",
                path.display(),
                set.dim(),
                model.dim()
            );
        }
    }

    let results = if query.is_empty() {
        warn!("query set {} is empty; all metrics are zero", args.query.display());
        Vec::new()
    } else {
        let index = build_index(&db, &model)
            .with_context(|| format!("indexing {}", args.db.display()))?;
        run_queries(&index, &query, cfg, args.mode)?
    };
    let report = if query.is_empty() {
        EvalReport::zeros()
    } else {
        let params = GroundTruthParams {
            gt_radius: cfg.gt_radius_for(args.mode),
            exclusion_frames: cfg.exclusion_frames,
            same_sequence: args.mode == EvalMode::Loop,
        };
        let gt = build_ground_truth(
            &query.positions_f64(),
            &query.frame_ids,
            &db.positions_f64(),
            &db.frame_ids,
            params,
        )?;
        if gt.evaluable_count() == 0 {
            warn!("no query has a ground-truth match within {} m", params.gt_radius);
        }
        EvalReport::from_results(&results, &gt, db.len())
    };

    let tag = args.metric;
    let report_path = out.join(format!("report_{tag}.txt"));
    write_file(&report_path, report.to_text().as_bytes())?;
    let pr_path = out.join(format!("pr_curve_{tag}.csv"));
    write_file(&pr_path, report.pr_curve_csv().as_bytes())?;
    let results_path = if args.write_results {
        let path = out.join(format!("results_{tag}.csv"));
        write_results(&path, &query.frame_ids, &results)?;
        Some(path)
    } else {
        None
    };
    Ok(EvaluateOutcome {
        report,
        report_path,
        pr_path,
        results_path,
    })
}

/// Ranked lists long enough for every reported cutoff. In loop mode the
/// query's own temporal neighbourhood is never a candidate.
fn run_queries(
    index: &MetricIndex,
    query: &DescriptorSet,
    cfg: &PipelineConfig,
    mode: EvalMode,
) -> Result<Vec<Vec<Neighbor>>> {
    let k = one_percent_cutoff(index.len()).max(AR_AT[AR_AT.len() - 1]);
    let exclusion = cfg.exclusion_frames;
    let results = (0..query.len())
        .into_par_iter()
        .map(|i| {
            let q = query.row_f64(i);
            match mode {
                EvalMode::Place => index.query(&q, k),
                EvalMode::Loop => {
                    let qf = query.frame_ids[i];
                    index.query_filtered(&q, k, |id| id.abs_diff(qf) > exclusion)
                }
            }
        })
        .collect::<lpr_core::Result<Vec<_>>>()?;
    Ok(results)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_results(path: &Path, query_ids: &[u32], results: &[Vec<Neighbor>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["query_id", "rank", "frame_id", "distance"])?;
    for (qid, hits) in query_ids.iter().zip(results) {
        for (rank, n) in hits.iter().enumerate() {
            w.write_record([
                qid.to_string(),
                (rank + 1).to_string(),
                n.frame_id.to_string(),
                format!("{:.9}", n.distance),
            ])?;
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedTriplet {
    pub query_id: u32,
    pub pos_id: u32,
    pub neg_id: u32,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct MineArgs {
    /// Defaults to `descriptors.dsc` in the output directory.
    pub descriptors: Option<PathBuf>,
    /// Identity metric when absent.
    pub model: Option<PathBuf>,
    pub hinge: bool,
}

#[derive(Debug, Clone)]
pub struct MineSummary {
    pub triplets: Vec<MinedTriplet>,
    pub skipped: usize,
    pub path: PathBuf,
}

impl fmt::Display for MineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mined {} triplets ({} queries without positives or negatives) into {}",
            self.triplets.len(),
            self.skipped,
            self.path.display()
        )
    }
}

/// For every descriptor, the farthest positive (another entry within the
/// ground-truth radius) and the nearest negative (everything beyond it),
/// with the resulting triplet loss.
pub fn cmd_mine(cfg: &PipelineConfig, args: &MineArgs) -> Result<MineSummary> {
    let out = prepare_output(cfg)?;
    let input = args
        .descriptors
        .clone()
        .unwrap_or_else(|| out.join(DESCRIPTOR_FILE));
    let set = load_any_descriptors(&input)?;
    let model = match &args.model {
        Some(path) => load_model(path).with_context(|| format!("model file {}", path.display()))?,
        None => MetricModel::identity(set.dim()),
    };
    let index = build_index(&set, &model).with_context(|| format!("indexing {}", input.display()))?;
    let radius = cfg.gt_radius_for(EvalMode::Place);
    let positions = set.positions_f64();
    let row_of: BTreeMap<u32, usize> = set.frame_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mined = (0..set.len())
        .into_par_iter()
        .map(|i| -> Result<Option<MinedTriplet>> {
            let ranked = index.query(&set.row_f64(i), set.len())?;
            let near = |n: &&Neighbor| {
                let p = positions[row_of[&n.frame_id]];
                let (dx, dy) = (p[0] - positions[i][0], p[1] - positions[i][1]);
                dx * dx + dy * dy <= radius * radius
            };
            let qid = set.frame_ids[i];
            // Ranked ascending, so the last positive is the farthest and the
            // first negative the nearest.
            let pos = ranked.iter().rev().find(|n| n.frame_id != qid && near(n));
            let neg = ranked.iter().find(|n| !near(n));
            let (Some(pos), Some(neg)) = (pos, neg) else {
                return Ok(None);
            };
            let loss = triplet_loss_from_distances(&[pos.distance], &[neg.distance], cfg.margin, args.hinge)?;
            Ok(Some(MinedTriplet {
                query_id: qid,
                pos_id: pos.frame_id,
                neg_id: neg.frame_id,
                loss,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = mined.iter().filter(|m| m.is_none()).count();
    let triplets: Vec<MinedTriplet> = mined.into_iter().flatten().collect();

    let path = out.join(TRIPLET_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["query_id", "pos_id", "neg_id", "loss"])?;
    for t in &triplets {
        w.write_record([
            t.query_id.to_string(),
            t.pos_id.to_string(),
            t.neg_id.to_string(),
            format!("{:.9}", t.loss),
        ])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(MineSummary {
        triplets,
        skipped,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_classes_by_size() {
        let h = class_size_histogram(&[0, 0, 1, 2, 2, 3, 3]);
        assert_eq!(h, BTreeMap::from([(1, 1), (2, 3)]));
    }

    #[test]
    fn metric_choice_parsing() {
        assert_eq!("mapvlm".parse::<MetricChoice>().unwrap(), MetricChoice::Mapvlm);
        assert_eq!("euclidean".parse::<MetricChoice>().unwrap(), MetricChoice::Euclidean);
        assert!("cosine".parse::<MetricChoice>().is_err());
    }
}
