use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spectraforge_core::Error),
    #[error(transparent)]
    Tensor(#[from] spectraforge_tensornet::TensorError),
    #[error(transparent)]
    Train(#[from] spectraforge_training::TrainError),
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
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for file-system failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let io = match self {
            CliError::Io { .. } => true,
            CliError::Core(e) => e.is_io(),
            CliError::Train(e) => e.is_io(),
            _ => false,
        };
        if io {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
