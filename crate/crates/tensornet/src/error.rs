use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward needs a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: no valid elements under the mask")]
    EmptyMask(&'static str),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
