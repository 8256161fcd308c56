//! Reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Everything runs single-threaded and in a fixed order, so results are
//! bit-reproducible for a given sequence of operations.

pub mod functional;
pub mod linalg;
pub mod nn;
pub mod ops;
pub mod optim;
mod tensor;

pub use linalg::ConvGeometry;
pub use nn::{frozen, Conv3d, ConvTranspose3d, LayerNorm, Linear, Module};
pub use optim::{ema_update, AdamW, AdamWConfig, AdamWState};
pub use tensor::{Gradients, Tensor};
