use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("no valid action available")]
    NoAction,

    #[error("replay buffer holds {have} experiences, need {need}")]
    NotReady { have: usize, need: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training diverged at episode {episode} (loss {loss:e}); last stable checkpoint: {last_checkpoint:?}")]
    TrainingFailure {
        episode: usize,
        loss: f64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for invalid input, 2 for training failures, 3 for
    /// I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TrainingFailure { .. } => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
