use thiserror::Error;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenRange { id: usize, vocab: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("inconsistent sample: {0}")]
    Inconsistent(String),

    #[error("context length {len} exceeds model limit {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("stale batch: {0}")]
    StaleBatch(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::Schema(_) | Error::Decode(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
