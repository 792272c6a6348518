//! Error types shared across the crate.

use crate::model::HeadId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("weight file error: {0}")]
    WeightFormat(String),

    #[error("missing tensor '{name}' in weight file")]
    MissingTensor { name: String },

    #[error("tensor '{name}' shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("sequence of {len} tokens exceeds max context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("head {head:?} out of range for model with {n_layers} layers x {n_heads} heads")]
    HeadOutOfRange {
        head: HeadId,
        n_layers: usize,
        n_heads: usize,
    },

    #[error("head {0:?} was not captured in this trace")]
    HeadNotCaptured(HeadId),

    #[error("lens error: {0}")]
    Lens(String),

    #[error("detection error: {0}")]
    Detection(String),

    #[error("intervention error: {0}")]
    Intervention(String),

    #[error("task file error: {0}")]
    TaskSchema(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("report error: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
