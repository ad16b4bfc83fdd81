use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the spectral pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("invalid wavelength grid: {0}")]
    Wavelengths(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("value {value} at flat index {index} outside [0, 1] in a non-raw cube")]
    OutOfRange { index: usize, value: f32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("png error on {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the file system rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Png { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
