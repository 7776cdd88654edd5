use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

pub(crate) fn require_len(got: usize, needed: usize) -> Result<()> {
    if got < needed {
        Err(StatsError::InsufficientData { needed, got })
    } else {
        Ok(())
    }
}

pub(crate) fn require_finite(values: &[f64]) -> Result<()> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput(format!("non-finite value {bad}")));
    }
    Ok(())
}
