//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("{op}: dtype mismatch: {msg}")]
    DType { op: &'static str, msg: String },
    #[error("{op}: operands live on different tapes")]
    TapeMismatch { op: &'static str },
    #[error("backward: {0}")]
    Backward(String),
}

#[derive(Debug, Error)]
pub enum FocusError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, FocusError>;
