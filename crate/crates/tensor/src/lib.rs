//! Dense n-dimensional tensors with a define-by-run reverse-mode tape.
//!
//! Every op returns a new [`Tensor`]; when any input requires a gradient the
//! output records a [`TapeNode`] so that [`Tensor::backward`] can replay the
//! graph in reverse. Models train in `f32`; gradient checks run in `f64`.

pub mod checkpoint;
mod element;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod rng;
pub mod shape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::{conv_out_extent, Conv2dSpec};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use rng::SplitMix64;
pub use tensor::{BackwardCtx, BackwardFn, Op, TapeNode, Tensor};
