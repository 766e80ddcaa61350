use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("{context}: channel value {value} outside [0, 1]")]
    ValueOutOfRange { context: &'static str, value: f64 },

    #[error("invalid bbox [{x_l}, {y_l}, {x_r}, {y_r}] for {width}x{height} frame: {reason}")]
    InvalidBBox {
        x_l: i64,
        y_l: i64,
        x_r: i64,
        y_r: i64,
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("{context}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        context: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("layer {layer}: alpha {alpha:.4} at ({x}, {y}) lies outside bbox")]
    AlphaOutsideBBox {
        layer: usize,
        x: usize,
        y: usize,
        alpha: f64,
    },

    #[error("invalid generator config: {reason}")]
    InvalidConfig { reason: String },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("missing file {path}")]
    MissingFile { path: PathBuf },

    #[error("png codec error for {path}: {source}")]
    Png {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImagingError>;
