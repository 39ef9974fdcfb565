//! Library error type. Every fallible operation returns [`Result`];
//! corrupt inputs are rejected with a kind that names the offending
//! file or field rather than a generic message.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SedgeError>;

#[derive(Debug, Error)]
pub enum SedgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, not a SEDG tensor file")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {found}, expected 1")]
    BadVersion { path: PathBuf, found: u32 },

    #[error("{path}: unsupported dtype code {found}")]
    BadDtype { path: PathBuf, found: u32 },

    #[error("{path}: tensor extent product overflows (dims {dims:?})")]
    DimOverflow { path: PathBuf, dims: Vec<u32> },

    #[error("{path}: payload holds {found} values, dims require {expected}")]
    PayloadLength {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: non-finite value at flat index {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{file}: {message}")]
    Validation { file: String, message: String },

    #[error("unknown domain {name:?}, valid domains: {valid:?}")]
    UnknownDomain { name: String, valid: Vec<String> },

    #[error("{0}")]
    InvalidArgument(String),
}

impl SedgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SedgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(file: impl Into<String>, message: impl Into<String>) -> Self {
        SedgeError::Validation {
            file: file.into(),
            message: message.into(),
        }
    }

    pub fn invalid_argument(message: impl Into<String>) -> Self {
        SedgeError::InvalidArgument(message.into())
    }
}
