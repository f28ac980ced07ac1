//! Experiment configuration, orchestration and persistence.

mod config;
mod estimate;
mod output;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, parse_config_str, ExperimentConfig, OracleConfig};
pub use estimate::{estimate_cmd, read_samples, EstimateReport};
pub use output::{
    downsample, read_trajectory_csv, render_svg, trajectory_file_name, write_trajectory_csv, TrajectoryRecord,
    MAX_CURVE_POINTS,
};
pub use run::{
    compare, mode_seed, recompute_summary, run_experiment, summarize, sweep_t, BenchmarkSummary, CompareRow,
    EpisodeFailure, ModeSummary, RunArtifacts, ScalingRow, Summary, PAPER_NOISES,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parse error at line {line}, column {column}{}: {message}", key.as_ref().map(|k| format!(" (key `{k}`)")).unwrap_or_default())]
    Parse { line: usize, column: usize, key: Option<String>, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, row {row}: {message}")]
    Data { path: PathBuf, row: usize, message: String },
    #[error("estimator: {0}")]
    Estimator(#[from] crate::estimators::EstimatorError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. } | HarnessError::Validation(_) => 2,
            HarnessError::Invariant(_) | HarnessError::Estimator(_) => 3,
            HarnessError::Io { .. } | HarnessError::Data { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
