use thiserror::Error;

/// Errors raised by the training engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("network spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("forward cache is stale or was produced by a different network")]
    StaleCache,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("accounting identity violated: {0}")]
    Accounting(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
