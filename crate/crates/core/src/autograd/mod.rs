//! Minimal reverse-mode automatic differentiation over `f64` NCHW tensors.
//!
//! Only the operations the generator, discriminators and losses need are
//! provided. Everything runs in double precision so finite-difference checks
//! can be held to tight tolerances.

mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use params::{Adam, AdamConfig, AdamState, ParamSet};
pub use tensor::Tensor;
