//! Error type shared across the engine.

/// Errors produced by tensor ops, the tape, data loading, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was given inputs whose shapes do not conform to its
    /// shape rule. `detail` names the offending dimensions.
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocab { id: usize, vocab: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("duplicate task id '{0}'")]
    DuplicateTask(String),

    #[error("unregistered head key '{0}'")]
    UnknownHead(String),

    #[error("line {line}: {msg}")]
    Jsonl { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
