use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DicoError {
    #[error("shape error: {0}")]
    Shape(String),

    /// Every violation found while validating a configuration.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Ingestion { path: PathBuf, message: String },

    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { term: &'static str, iteration: u64 },

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint model hash {checkpoint} does not match configuration model hash {config}")]
    HashMismatch { checkpoint: String, config: String },

    #[error("{0}")]
    Data(String),
}

impl DicoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DicoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DicoError::Ingestion {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DicoError::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input (configuration, manifests,
    /// incompatible checkpoints) rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, DicoError::Config(_) | DicoError::HashMismatch { .. })
    }
}

pub type Result<T> = std::result::Result<T, DicoError>;
