use thiserror::Error;

/// Errors raised anywhere in the knockoff pipeline.
#[derive(Debug, Error)]
pub enum KnockoffError {
    #[error("column {column} is degenerate (variance {variance:e} below threshold)")]
    DegenerateColumn { column: String, variance: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KnockoffError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            KnockoffError::Numeric(_) | KnockoffError::DegenerateColumn { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, KnockoffError>;
