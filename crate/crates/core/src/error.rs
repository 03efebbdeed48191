use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FscError>;

#[derive(Debug, Error)]
pub enum FscError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("cannot parse cell at row {row}, column {column}: {value:?}")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("non-finite value at row {row}, column {column}: {value:?}")]
    NonFinite {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("label at row {row} is not an integer: {value:?}")]
    BadLabel { row: usize, value: String },

    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),

    #[error("dataset is empty")]
    Empty,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("requested {requested} but only {available} available")]
    TooMany { requested: usize, available: usize },

    #[error("dataset of {n} points exceeds the dense oracle cap of {cap}")]
    OracleCap { n: usize, cap: usize },
}

impl FscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FscError::Io {
            path: path.into(),
            source,
        }
    }
}
