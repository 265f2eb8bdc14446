use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("arity mismatch: {0}")]
    ArityMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("transport solver did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) => {
                2
            }
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::ArityMismatch(_) => "arity-mismatch",
            Error::Empty(_) => "empty-input",
            Error::Numerical(_) => "numerical-failure",
            Error::NotConverged { .. } => "not-converged",
            Error::Config(_) => "schema-violation",
            Error::Parse { .. } => "parse-error",
            Error::Io { .. } => "io-failure",
            Error::Json(_) => "schema-violation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
