use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CelpError>;

#[derive(Debug, Error)]
pub enum CelpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty region: no position carries label {label}")]
    EmptyRegion { label: u8 },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("invalid center {index}: mask value there is {value}, expected background (0)")]
    InvalidCenter { index: usize, value: u8 },

    #[error("invalid mask value {value} at position {index}; allowed values are 0, 1 and 255")]
    InvalidLabel { index: usize, value: u8 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported dtype byte {0}")]
    UnsupportedDtype(u8),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("accumulator is empty")]
    EmptyAccumulator,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CelpError {
    pub fn dim(msg: impl Into<String>) -> Self {
        CelpError::Dimension(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CelpError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CelpError::Io {
            path: path.into(),
            source,
        }
    }
}
