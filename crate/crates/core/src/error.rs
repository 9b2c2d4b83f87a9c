use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by an injected external model (detector, backbone,
/// sentence embedder, similarity model or entity recognizer).
#[derive(Debug, Clone, Error)]
#[error("{adapter}: {message}")]
pub struct AdapterError {
    pub adapter: String,
    pub message: String,
    /// Whether retrying the same call may succeed.
    pub retryable: bool,
}

impl AdapterError {
    pub fn new(adapter: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            adapter: adapter.into(),
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(adapter: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            ..Self::new(adapter, message)
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record: {0}")]
    Invalid(String),

    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate image {width}x{height}")]
    DegenerateImage { width: u32, height: u32 },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("span {start}..{end} out of range for caption of {len} chars")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error(transparent)]
    Adapter(#[from] AdapterError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing cached features for {0}")]
    MissingFeatures(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported image source {0:?}")]
    UnsupportedSource(String),

    #[error("annotation conflict: {0}")]
    Conflict(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Regex(#[from] regex::Error),
}

impl Error {
    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
