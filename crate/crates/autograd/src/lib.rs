//! Reverse-mode automatic differentiation over rank-4 (NCHW) tensors.
//!
//! The engine is deliberately small: a flat tape of ops ([`Graph`]), contiguous
//! tensors, and im2col convolution on top of `matrixmultiply`. Everything is
//! generic over [`Real`] so the same model code runs in `f32` for training and
//! `f64` for gradient verification.

mod conv;
mod error;
mod graph;
mod pool;
mod real;
mod tensor;

pub use conv::ConvGeometry;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use real::{DType, Layout, Real};
pub use tensor::{Shape, Tensor};
