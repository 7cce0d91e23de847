use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::CharSpan;
use crate::scg::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord { path: PathBuf, line: usize, message: String },

    #[error("document `{doc_id}`: span {span} covers `{found}` but trigger text is `{expected}`")]
    SpanMismatch {
        doc_id: String,
        span: CharSpan,
        expected: String,
        found: String,
    },

    #[error("document `{doc_id}`: invalid span {span}: {reason}")]
    InvalidSpan { doc_id: String, span: CharSpan, reason: String },

    #[error("document `{doc_id}`: event type `{event_type}` is not in the schema")]
    UnknownEventType { doc_id: String, event_type: String },

    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown doc_id `{0}`")]
    UnknownDocId(String),

    #[error("invalid graph ({} violation(s)): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),

    #[error("document `{doc_id}`: text contains demarcation token `{token}`")]
    DemarcationCollision { doc_id: String, token: String },

    #[error("need at least {needed} training documents, have {available}")]
    NotEnoughExamples { needed: usize, available: usize },

    #[error("vector dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector{}", .0.as_ref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    ZeroNorm(Option<String>),

    #[error("non-finite vector component{}", .0.as_ref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    NonFinite(Option<String>),

    #[error("provider error: {0}")]
    Provider(#[from] crate::gateway::ProviderError),

    #[error("run manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
