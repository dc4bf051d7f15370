use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} covariates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("schema violation at row {row}: {reason}")]
    Schema { row: usize, reason: String },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("arm {arm} has {rows} rows, need at least {needed}; use a larger initial batch")]
    DegenerateArm { arm: u8, rows: usize, needed: usize },

    #[error("wrong batch size: expected {expected}, got {got}")]
    BatchSize { expected: usize, got: usize },

    #[error("test already terminated with verdict {0:?}")]
    Terminated(crate::types::Decision),

    #[error("integration did not converge: {0}")]
    Quadrature(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by user input (bad files, schema, config)
    /// as opposed to internal numeric failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Quadrature(_) | Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
