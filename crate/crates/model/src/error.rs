use thiserror::Error;

/// Errors raised while tokenizing stacks, running the backbone, or training.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] layerflow_tensor::TensorError),

    #[error(transparent)]
    Imaging(#[from] layerflow_imaging::ImagingError),

    #[error("invalid model config: {reason}")]
    Config { reason: String },

    #[error("{what} of {got} exceeds configured maximum {max}")]
    Capacity {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("word {word:?} is not in the model vocabulary")]
    Vocabulary { word: String },

    #[error("text token id {id} out of range for vocabulary of {vocab} words")]
    TokenId { id: usize, vocab: usize },

    #[error("sequence mismatch: {reason}")]
    Sequence { reason: String },

    #[error("time {t} outside the unit interval")]
    Time { t: f64 },

    #[error("numeric failure at step {step}: {reason}")]
    Numeric { step: u64, reason: String },

    #[error("checkpoint: {reason}")]
    Checkpoint { reason: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;
