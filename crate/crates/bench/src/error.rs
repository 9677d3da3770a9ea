//! Error type of the experiment runner and its mapping to exit codes.

use std::path::PathBuf;

/// Errors raised by the runner.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// The configuration file could not be parsed or is inconsistent.
    #[error("config error in {path}: {message}")]
    Config {
        /// Offending file.
        path: PathBuf,
        /// Description including line/field information where available.
        message: String,
    },
    /// A model or solver parameter was rejected by the numerical core.
    #[error(transparent)]
    Model(#[from] msrm::Error),
    /// A solve finished without meeting its convergence test.
    #[error("{experiment}/{method}: solver did not converge ({detail})")]
    NonConvergence {
        /// Experiment name.
        experiment: String,
        /// Method label.
        method: String,
        /// Extra detail.
        detail: String,
    },
    /// Result files passed to `compare` have different columns.
    #[error("schema mismatch in {path}: {message}")]
    SchemaMismatch {
        /// Offending file.
        path: PathBuf,
        /// Description.
        message: String,
    },
    /// File-system failure.
    #[error("{context}: {source}")]
    Io {
        /// What was being done.
        context: String,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
    /// CSV encoding/decoding failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// JSON encoding failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit code: `2` for non-convergence, `3` for configuration and
    /// model-parameter errors, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::NonConvergence { .. } => 2,
            BenchError::Config { .. } | BenchError::SchemaMismatch { .. } => 3,
            BenchError::Model(e) => match e {
                msrm::Error::DimensionMismatch { .. }
                | msrm::Error::SingularCovariance(_)
                | msrm::Error::InvalidParameter(_)
                | msrm::Error::InvalidIndexTuple { .. }
                | msrm::Error::StripEmpty(_)
                | msrm::Error::DimensionUnsupported { .. }
                | msrm::Error::DirectionNumbers { .. }
                | msrm::Error::InvalidDesign(_) => 3,
                _ => 1,
            },
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        BenchError::Io {
            context: context.into(),
            source,
        }
    }
}

/// Result alias for the runner.
pub type Result<T> = std::result::Result<T, BenchError>;
