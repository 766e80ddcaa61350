//! Error type for the evaluation crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Imaging(#[from] layerflow_imaging::ImagingError),

    #[error("{context}: image sizes {got_w}x{got_h} and {want_w}x{want_h} differ")]
    SizeMismatch {
        context: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("{context}: image {w}x{h} is smaller than the {min} pixel window")]
    TooSmall {
        context: &'static str,
        w: usize,
        h: usize,
        min: usize,
    },

    #[error("{name} = {value} lies outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("{context}: need at least {min} samples, got {got}")]
    NotEnoughSamples {
        context: &'static str,
        got: usize,
        min: usize,
    },

    #[error("{context} is empty")]
    Empty { context: &'static str },
}

pub type Result<T> = std::result::Result<T, MetricsError>;
