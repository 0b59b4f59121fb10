use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid building model: {0}")]
    InvalidModel(String),

    #[error("eigen solver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e}, target {target:e})")]
    EigenNotConverged {
        sweeps: usize,
        off_norm: f64,
        target: f64,
    },

    #[error("invalid measurement request: {0}")]
    InvalidMeasurement(String),

    #[error("degenerate mode data: {0}")]
    DegenerateData(String),

    #[error("covariance is not positive definite at gamma = {gamma:e}, beta = {beta:e}")]
    NotPositiveDefinite { gamma: f64, beta: f64 },

    #[error("collapsed posterior mean: modal mass {modal_mass:e} is not positive")]
    CollapsedMean { modal_mass: f64 },

    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidModel(_)
                | Error::InvalidMeasurement(_)
                | Error::Io { .. }
        )
    }
}
