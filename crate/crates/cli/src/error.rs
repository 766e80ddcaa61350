//! CLI error type carrying the exit-code contract: 1 validation, 2 IO,
//! 3 numeric failure.

use layerflow_imaging::ImagingError;
use layerflow_metrics::MetricsError;
use layerflow_model::ModelError;
use layerflow_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::Io(_) | ImagingError::MissingFile { .. } | ImagingError::Png { .. } => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io(_) | TensorError::Checkpoint(_) => CliError::Io(e.to_string()),
            TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(inner) => inner.into(),
            ModelError::Imaging(inner) => inner.into(),
            ModelError::Numeric { .. } => CliError::Numeric(e.to_string()),
            ModelError::Checkpoint { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Imaging(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
