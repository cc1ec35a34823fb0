//! Command-line pipeline over `lpr-core`: project scans, compute or import
//! descriptors, fit the metric, evaluate retrieval and mine triplets.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_describe, cmd_evaluate, cmd_fit_metric, cmd_mine, cmd_project, EvaluateArgs, MetricChoice,
    MineArgs,
};
pub use config::{DescriptorSource, EvalMode, PipelineConfig};
