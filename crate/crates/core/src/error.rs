use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("skeleton of subject {0} has no detected joints")]
    Unimputable(i64),

    #[error("subject {subject} missing from frame {frame}")]
    MissingSubject { subject: i64, frame: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("class activation maps need the linear (GAP) head variant")]
    UnsupportedHead,

    #[error("ambiguous type naming: {0}")]
    Ambiguous(String),

    #[error("audit failed: {0}")]
    Audit(String),

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
