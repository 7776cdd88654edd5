use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("expired: {0}")]
    Expired(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("storage: {0}")]
    Storage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Stats(#[from] moods_stats::StatsError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::Validation(_) => "validation",
            CoreError::NotFound(_) => "not_found",
            CoreError::Conflict(_) => "conflict",
            CoreError::Expired(_) => "expired",
            CoreError::Precondition(_) => "precondition",
            CoreError::Storage(_) | CoreError::Io(_) | CoreError::Json(_) => "storage",
            CoreError::Stats(_) => "analysis",
        }
    }
}
