use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid market configuration: {0}")]
    InvalidMarket(String),

    #[error("invalid information model: {0}")]
    InvalidInformation(String),

    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    #[error("invalid claim: {0}")]
    InvalidClaim(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("minimal martingale measure: {invalid} of {total} paths violate 1 - alpha dM > 0")]
    JumpConditionViolated { invalid: usize, total: usize },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
