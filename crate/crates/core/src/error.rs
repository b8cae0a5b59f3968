use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the filtering engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line-oriented input file could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate doc_id {0}")]
    DuplicateDoc(String),

    #[error("invalid topic {topic}: {message}")]
    InvalidTopic { topic: String, message: String },

    #[error("empty collection")]
    EmptyCollection,

    #[error("document {0} has no tokens")]
    EmptyDocument(String),

    #[error("unknown document {0}")]
    UnknownDocument(String),

    #[error("schema mismatch: weights schema {weights}, features schema {features}")]
    SchemaMismatch { weights: u32, features: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("topic {0} is absent from qrels")]
    TopicNotJudged(String),

    #[error("run references unknown topics: {}", .0.join(", "))]
    UnknownTopics(Vec<String>),

    #[error("training diverged: objective decreased for {0} consecutive iterations; use a smaller learning rate")]
    Diverged(usize),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
