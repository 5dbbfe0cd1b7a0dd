use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("signal must have at least one element")]
    EmptySignal,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        value: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("oracle refused the query: access is blocked")]
    Blocked,

    #[error("numeric scores are not exposed by a binary-mode session")]
    ModeViolation,

    #[error("boundary not bracketed{}", dimension.map(|d| format!(" (probe dimension {d})")).unwrap_or_default())]
    NotBracketed { dimension: Option<usize> },

    #[error("watermark is still detected on the fully gray image")]
    GrayStartFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
