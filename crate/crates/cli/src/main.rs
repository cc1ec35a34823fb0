use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lpr_cli::{
    cmd_describe, cmd_evaluate, cmd_fit_metric, cmd_mine, cmd_project, EvalMode, EvaluateArgs,
    MetricChoice, MineArgs, PipelineConfig,
};

/// LiDAR place recognition with a learned Mahalanobis metric.
#[derive(Parser, Debug)]
#[command(name = "lpr", version)]
struct Cli {
    /// Pipeline config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mapvlm.d1=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write pseudo-global view images and a manifest for every scan.
    Project,
    /// Compute baseline descriptors or import external ones.
    Describe,
    /// Fit the metric on a descriptor file.
    FitMetric {
        /// Defaults to descriptors.dsc in the output directory.
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Score retrieval of query descriptors against a database.
    Evaluate {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Defaults to model.spd in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// `place` (separate traversals) or `loop` (same trajectory).
        #[arg(long, default_value = "place")]
        mode: EvalMode,
        /// `mapvlm` or `euclidean`.
        #[arg(long, default_value = "mapvlm")]
        metric: MetricChoice,
        /// Also write the ranked lists as CSV.
        #[arg(long)]
        results: bool,
    },
    /// Emit the hardest triplet for every descriptor as CSV.
    Mine {
        #[arg(long)]
        descriptors: Option<PathBuf>,
        /// Identity metric when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Clamp losses at zero.
        #[arg(long)]
        hinge: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.output_dir = Some(out);
    }
    match cli.command {
        Command::Project => println!("{}", cmd_project(&cfg)?),
        Command::Describe => println!("{}", cmd_describe(&cfg)?),
        Command::FitMetric { descriptors } => {
            println!("{}", cmd_fit_metric(&cfg, descriptors.as_deref())?)
        }
        Command::Evaluate {
            query,
            db,
            model,
            mode,
            metric,
            results,
        } => {
            let args = EvaluateArgs {
                query,
                db,
                model,
                mode,
                metric,
                write_results: results,
            };
            println!("{}", cmd_evaluate(&cfg, &args)?)
        }
        Command::Mine {
            descriptors,
            model,
            hinge,
        } => println!(
            "{}",
            cmd_mine(
                &cfg,
                &MineArgs {
                    descriptors,
                    model,
                    hinge
                }
            )?
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
