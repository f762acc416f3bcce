use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("actor produced no candidate actions")]
    ActorExhausted,

    #[error("critic unavailable: {0}")]
    CriticUnavailable(String),

    #[error("oracle mirror desync: {0}")]
    OracleDesync(String),

    #[error("environment protocol violation: {0}")]
    EnvProtocol(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transient failures that justify a single retry of the decision step.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend(e) if e.is_retryable())
    }
}
