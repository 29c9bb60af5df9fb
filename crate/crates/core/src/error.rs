use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown speaker id {id} (model has {n_speakers} speakers)")]
    UnknownSpeaker { id: usize, n_speakers: usize },
    #[error("non-finite value in {stage}")]
    NonFinite { stage: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
