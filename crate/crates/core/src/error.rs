use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateDocument { id: String, line: usize },

    #[error("entity extraction failed for sentence {sent_id}: {message}")]
    Extraction { sent_id: usize, message: String },

    #[error("entity extraction failed for the query: {0}")]
    QueryExtraction(String),

    #[error("embedding provider error (batch {batch}): {message}")]
    Provider { batch: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transition matrix is not column-stochastic: column {column} sums to {sum}")]
    NotStochastic { column: usize, sum: f64 },

    #[error("index file {file}: {message}")]
    IndexFile { file: String, message: String },

    #[error("unsupported index format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("generator error: {0}")]
    Generator(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn index_file(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::IndexFile {
            file: file.into(),
            message: message.into(),
        }
    }
}
