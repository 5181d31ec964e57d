//! Error type shared across the toolkit.

use thiserror::Error;

/// Coarse error class, used by callers (the CLI in particular) to map a
/// failure onto an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or arguments; the request never made sense.
    Validation,
    /// The inputs were structurally fine but the data cannot support the
    /// operation (missing ids, insufficient rows, mismatched schemas...).
    Data,
    /// I/O failures and everything else.
    Internal,
}

#[derive(Debug, Error)]
pub enum CmaError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CmaError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CmaError::Config(_) => ErrorKind::Validation,
            CmaError::Lookup(_)
            | CmaError::Encoding(_)
            | CmaError::Embedding(_)
            | CmaError::Training(_)
            | CmaError::Data(_)
            | CmaError::Feature(_)
            | CmaError::Metric(_)
            | CmaError::Index(_)
            | CmaError::Parse(_)
            | CmaError::Format(_) => ErrorKind::Data,
            CmaError::Io(_) => ErrorKind::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, CmaError>;
