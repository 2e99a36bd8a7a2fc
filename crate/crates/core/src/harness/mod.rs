//! Experiment orchestration, configuration, metrics and reports.

mod config;
mod diagnostics;
mod experiment;
mod metrics;
mod report;

use thiserror::Error;

use crate::agent::AgentError;
use crate::buffers::BufferError;
use crate::envs::EnvError;
use crate::numkit::NumError;
use crate::worldmodel::WorldModelError;

pub use config::ExperimentConfig;
pub use diagnostics::{gradcheck_suite, GradCheckCase, GRADCHECK_TOLERANCE};
pub use experiment::{
    evaluate, run_experiment, run_experiment_with, run_seeds, weight_depth_metric, Progress, RunOutput, ALEATORIC,
    EPISTEMIC, EVAL_RETURN, MEAN_SIGMA, MODEL_LOSS,
};
pub use metrics::{bootstrap_ci, bootstrap_difference_ci, iqm, MetricBundle, MetricSeries};
pub use report::{
    emit_report, long_table, metric_table, parse_long_table, parse_metric_table, RunManifest, LONG_CSV, MANIFEST,
};

/// Environment variable that overrides the report directory.
pub const OUT_DIR_ENV: &str = "WIMLE_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metric(String),
    #[error("io: {0}")]
    Io(String),
    #[error("run aborted, non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Model(#[from] WorldModelError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Num(#[from] NumError),
}
