use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor shape {shape:?} holds {expected} values but {found} were supplied")]
    DataLength { shape: Vec<usize>, expected: usize, found: usize },
    #[error("shape {0:?} is invalid (dimensions must be positive)")]
    InvalidShape(Vec<usize>),
    #[error("backward root must be a scalar, found shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
