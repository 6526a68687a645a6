use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed: {message}")]
    Training {
        message: String,
        /// Parameter whose gradient or value went non-finite, when known.
        parameter: Option<String>,
        /// Per-epoch objective history up to the failure.
        history: Vec<f64>,
    },

    #[error("model state: {0}")]
    State(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("data not found at {path}: {layout}")]
    DataNotFound { path: PathBuf, layout: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Zip(#[from] zip::result::ZipError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn training(msg: impl Into<String>) -> Self {
        Error::Training {
            message: msg.into(),
            parameter: None,
            history: Vec::new(),
        }
    }
}
