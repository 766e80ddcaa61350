//! Minimal dense-tensor runtime with reverse-mode autodiff.
//!
//! Built around three pieces: a value type ([`Tensor`]) over a swappable
//! element type (f32 for training, f64 for reference math), a Wengert
//! tape ([`Tape`]) recording every op for one backward pass, and the
//! training utilities that sit on top (Adam, checkpoints, gradient
//! checking). All arithmetic lands in [`kernels`] so that external
//! reference implementations can reuse the exact same floating-point
//! operation order and compare results bit for bit.

pub mod adam;
pub mod checkpoint;
pub mod dtype;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint_info, save_checkpoint, Checkpoint};
pub use dtype::{DType, Element};
pub use error::{Result, TensorError};
pub use tape::{Gradients, RotationTable, Tape, Var};
pub use tensor::{strides_of, Tensor};
