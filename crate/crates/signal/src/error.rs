use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;
