//! Experiment driver: continual runs with an optional shifted task, the joint
//! baseline, multi-seed replication, metrics and factor sweeps.

mod config;
mod output;
mod run;
mod stats;
mod sweep;

use std::path::Path;

use thiserror::Error;

pub use config::{
    DataSection, EvalSection, ExperimentConfig, ShiftMethod, ShiftSection, StrategySection,
    TrainSection, DATA_DIR_ENV,
};
pub use output::{
    format_mean_std, read_run_csv, render_report, write_manifest, write_run_csv,
    write_summary_csv, RunManifest,
};
pub use run::{
    evaluate, run_continual, run_joint_baseline, run_replicates, Benchmark, JointResult, RunResult,
};
pub use stats::{compute_metrics, Metrics, MeanStd, SummaryStats};
pub use sweep::{sweep, write_sweep_csv, Factor, SweepRow};

use crate::data::DataError;
use crate::strategies::StrategyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("empty test set for task {0}")]
    EmptyTestSet(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed results file {path}: {message}")]
    Results { path: String, message: String },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<crate::nn::NnError> for HarnessError {
    fn from(e: crate::nn::NnError) -> Self {
        HarnessError::Strategy(e.into())
    }
}
