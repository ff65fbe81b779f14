use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    InvalidUtf8 { path: PathBuf, line: usize },

    #[error("{path}: duplicate id {id:?} on lines {first} and {second}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        first: usize,
        second: usize,
    },

    #[error("sample {0:?} has no doc_id; document-level operations require one")]
    MissingDocId(String),

    #[error("n-gram length must be at least 1")]
    ZeroGramLength,

    #[error("cannot build an index over an empty corpus")]
    EmptyIndex,

    #[error("query is empty after normalization")]
    DegenerateQuery,

    #[error("length mismatch: {hypotheses} hypotheses vs {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },

    #[error("cannot score an empty corpus")]
    EmptyCorpus,

    #[error("no hypothesis for test ids: {}", .0.join(", "))]
    MissingHypotheses(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Index(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage/configuration problems as opposed to bad input data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ZeroGramLength | Error::LengthMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
