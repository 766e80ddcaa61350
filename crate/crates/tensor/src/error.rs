//! Error type shared by all tensor operations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A shape does not satisfy the operation's structural requirements.
    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    /// Scalar configuration parameter out of range (lr, eps, axis, ...).
    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// `backward` was called on a non-scalar output.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// NaN or Inf detected (checked in debug builds, and at explicit
    /// validation points such as training steps).
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Index out of bounds (gather rows, slicing).
    #[error("index {index} out of bounds for {op} with extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    /// Checkpoint file problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;
