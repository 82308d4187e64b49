use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("class count mismatch: {left} vs {right}")]
    ClassCountMismatch { left: usize, right: usize },

    #[error("tap after block {tap} is out of range for a {num_blocks}-block model (valid: 1..={num_blocks})")]
    TapOutOfRange { tap: usize, num_blocks: usize },

    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    UnknownName { kind: &'static str, name: String, available: Vec<String> },

    #[error("dataset `{name}` not found under {}: {hint}", root.display())]
    MissingDataset { name: String, root: PathBuf, hint: String },

    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss = {loss}")]
    Divergence { epoch: usize, iteration: u64, loss: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
