use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("{what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("malformed preference label {0:?}")]
    InvalidLabel([f64; 2]),

    #[error("invalid action {action} (task has {available} actions)")]
    InvalidAction { action: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("distribution table {0} is not normalized")]
    NotNormalized(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
