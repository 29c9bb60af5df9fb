use std::path::PathBuf;

use lipsynth_core::CoreError;
use lipsynth_data::DataError;
use lipsynth_signal::SignalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing dependency `{name}`: {detail}")]
    MissingDependency { name: String, detail: String },
    #[error("non-finite {what} at step {step}; last checkpoint left untouched")]
    NonFinite { what: String, step: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Coarse failure classes, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    MissingDependency,
    Data,
    Numerical,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Config(_) => ErrorClass::Usage,
            Self::MissingDependency { .. } | Self::Data(DataError::MissingDependency { .. }) => {
                ErrorClass::MissingDependency
            }
            Self::NonFinite { .. } | Self::Core(CoreError::NonFinite { .. }) => ErrorClass::Numerical,
            Self::Core(CoreError::Config(_)) => ErrorClass::Usage,
            Self::Signal(SignalError::Degenerate(_)) | Self::Data(DataError::Signal(SignalError::Degenerate(_))) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
