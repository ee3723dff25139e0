//! Differentiable primitive operations: 3x3 same-padded convolution,
//! 2x2 max pooling, dense (fully connected) layers, and ReLU.
//!
//! Each operation comes as a `*_forward` / `*_backward` pair. Backward
//! computes the gradient of `sum(upstream * output)` with respect to the
//! forward inputs, so chaining pairs in reverse order yields exact
//! backpropagation for the fixed network stack in [`crate::network`].

mod conv;
mod dense;
mod pool;
mod relu;

pub use conv::{conv2d_backward, conv2d_forward, ConvParams, KERNEL_SIZE};
pub use dense::{dense_backward, dense_forward, DenseParams};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndices};
pub use relu::{relu_backward, relu_forward, ReluMask};
