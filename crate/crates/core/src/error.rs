use std::io;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Every variant except [`Error::Usage`] is a data error: the inputs were
/// readable as arguments but their contents were rejected.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid run metadata: {0}")]
    InvalidMeta(String),

    #[error("invalid snapshot record: {0}")]
    InvalidRecord(String),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("log header missing")]
    MissingHeader,

    #[error("line {line}: duplicate header")]
    DuplicateHeader { line: usize },

    #[error("line {line}: duplicate record for epoch {epoch}, guid {guid:?}")]
    DuplicateRecord {
        line: usize,
        epoch: u32,
        guid: String,
    },

    #[error("ragged grid: instance {guid:?} has no record for epoch {epoch}")]
    RaggedGrid { guid: String, epoch: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    NonFinite { epoch: u32, message: String },

    #[error("unknown guid {0:?}")]
    UnknownGuid(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 1 for usage errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }
}
