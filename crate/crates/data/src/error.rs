use std::path::PathBuf;

use lipsynth_signal::SignalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("missing dependency `{name}`: {detail}")]
    MissingDependency { name: String, detail: String },
    #[error("{0}")]
    NotPrepared(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, detail: impl std::fmt::Display) -> DataError {
    DataError::Format {
        path: path.into(),
        detail: detail.to_string(),
    }
}
