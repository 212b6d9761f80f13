use thiserror::Error;

/// Errors raised by the differentiation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this record")]
    BackwardAlreadyRun,

    #[error("variable {0} does not belong to this record")]
    UnknownVar(usize),

    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("expected {expected} gradient tensors, got {actual}")]
    GradientCount { expected: usize, actual: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
