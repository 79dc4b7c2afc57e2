use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {details}")]
    InvalidArg { op: &'static str, details: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape { op, details: details.into() }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidArg { op, details: details.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
