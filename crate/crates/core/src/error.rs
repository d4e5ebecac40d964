use alloc::string::String;

/// Errors raised by the labeling, indexing and training primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("query `{query_id}`: needed {needed} candidates, only {available} available")]
    InsufficientCandidates {
        query_id: String,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Failure reported by an out-of-process scorer or rewriter.
    #[error("remote service error{}: {message}", chunk.map(|c| alloc::format!(" (chunk {c})")).unwrap_or_default())]
    Remote { chunk: Option<usize>, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
