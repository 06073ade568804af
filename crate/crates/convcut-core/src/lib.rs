//! Conv-cut: a truncated-ConvNeXt image classifier with a detail-extraction
//! block (separable convolutions + self-attention over pooled channel groups),
//! built on a small reverse-mode autodiff tensor engine.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (f32 or f64); the
//! shipping precision is f32 and the crate root exposes f32 aliases for it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod ops;
pub mod ppm;
pub mod rng;
pub mod scalar;
pub mod shape;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use shape::Shape;

/// f32 instantiations — the precision the artifact ships with.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tape::GradTape<f32>;
pub type Model32 = model::ConvCutModel<f32>;


