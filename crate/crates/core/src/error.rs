use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("timing violation: {0}")]
    TimingViolation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient samples: need at least {required}, got {actual}")]
    InsufficientSamples { required: usize, actual: usize },

    #[error("no defined correlation value to maximize")]
    NoEstimate,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error in {file} at offset {offset}: {message}")]
    Format {
        file: String,
        offset: u64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn format(file: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
