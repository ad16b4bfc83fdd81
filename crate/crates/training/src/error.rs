use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] spectraforge_core::Error),
    #[error(transparent)]
    Tensor(#[from] spectraforge_tensornet::TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples {samples:?}): {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        samples: Vec<String>,
        detail: String,
    },
    #[error("invalid checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("the test split is empty")]
    EmptyTestSplit,
}

impl TrainError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the file system rather than by the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            TrainError::Io { .. } => true,
            TrainError::Core(e) => e.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
