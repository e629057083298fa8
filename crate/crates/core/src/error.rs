use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Armijo backtracking exhausted its trial budget.
    #[error("step search failed after {trials} trials (last gamma = {gamma:e}, lhs = {lhs:e}, rhs = {rhs:e})")]
    StepSearch {
        trials: usize,
        gamma: f64,
        lhs: f64,
        rhs: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("power iteration collapsed to a zero vector after {restarts} restarts")]
    ZeroIterate { restarts: usize },

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSearch { .. } | Error::NonFinite(_) | Error::ZeroIterate { .. }
        )
    }

    /// Short machine-readable tag used in CLI error JSON and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::StepSearch { .. } => "step_search",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroIterate { .. } => "zero_iterate",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
