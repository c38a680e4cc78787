use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite loss at step {0}: {1}")]
    NonFiniteLoss(usize, String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown preset '{0}', available: {1}")]
    UnknownPreset(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
