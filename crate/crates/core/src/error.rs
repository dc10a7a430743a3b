use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate space-time point ({x}, {y}, {t})")]
    DuplicatePoint { line: usize, x: f64, y: f64, t: f64 },

    #[error("line {line}: non-finite {field}")]
    NonFinite { line: usize, field: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("values have zero variance")]
    ZeroVariance,

    #[error("unknown station id {0}")]
    UnknownStation(i64),

    #[error("data is not a rectangular station x time grid: {0}")]
    NonRectangular(String),

    #[error("matrix is not positive definite (last jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures originating in the numerics rather than in the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Optimization(_) | Error::ZeroVariance
        )
    }
}
