use std::io;

use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("channel mismatch: layer expects {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("invalid shape {0}: every dimension must be positive")]
    EmptyShape(Shape),

    #[error("data length {actual} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported kernel size {0}: expected 1 or 3")]
    Kernel(usize),

    #[error("cosine similarity undefined for an all-zero tensor")]
    UndefinedSimilarity,

    #[error("loss must be a scalar (1x1x1), got {0}")]
    NonScalarLoss(Shape),

    #[error("forward function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("epsilon {0} outside [1e-7, 1e-4]")]
    Epsilon(f64),

    #[error("learning rate must be positive, got {0}")]
    LearningRate(f64),

    #[error("index {index} out of range for {len} neighbors")]
    NeighborIndex { index: usize, len: usize },

    #[error("invalid neighborhood: {0}")]
    Neighborhood(String),

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
