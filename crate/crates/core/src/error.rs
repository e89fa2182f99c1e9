use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    #[error("invalid UTF-8 in {path} at byte {offset}")]
    Encoding { path: PathBuf, offset: usize },

    #[error("corpus is empty (no documents or no words)")]
    EmptyCorpus,

    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("empty token at line {line}")]
    EmptyToken { line: usize },

    #[error("token {token:?} contains whitespace")]
    WhitespaceInToken { token: String },

    #[error("unknown token {0:?} is not part of the vocabulary")]
    MissingUnkToken(String),

    #[error("target vocabulary size {target} must exceed the alphabet size {alphabet}")]
    TargetTooSmall { target: usize, alphabet: usize },

    #[error("index {requested} out of range (available: {available})")]
    OutOfRange { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("no base vector for token {0:?}")]
    MissingBaseVector(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroVector,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("target class {target} out of range for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad parameters rather than bad data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::TargetTooSmall { .. } | Error::InvalidConfig(_) | Error::OutOfRange { .. }
        )
    }
}
