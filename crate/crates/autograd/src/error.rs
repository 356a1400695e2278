use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    Mismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("shape {shape} needs {} elements, got {len}", shape.numel())]
    DataLength { shape: Shape, len: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
