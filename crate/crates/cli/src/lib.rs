//! Config-driven experiment runner for the estimators in `cevae-core`.

pub mod config;
pub mod results;
pub mod runner;

pub use config::{EstimatorKind, EstimatorSpec, ExperimentConfig, ExperimentKind};
pub use results::{read_results, render_table, summarize, ResultRow, Summary};
pub use runner::{run, RunOptions, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data not found: {0}")]
    DataNotFound(String),
    #[error(transparent)]
    Core(cevae_core::Error),
}

impl From<cevae_core::Error> for CliError {
    fn from(e: cevae_core::Error) -> Self {
        match e {
            cevae_core::Error::DataNotFound { .. } => CliError::DataNotFound(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for bad input (config, data, parse), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse(_) | CliError::DataNotFound(_) => 2,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}
