//! Forward and backward kernels on plain tensors.
//!
//! These functions know nothing about the graph; [`crate::graph`] records
//! which kernel produced each node and calls the matching backward here.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod pool;
pub mod upsample;

pub use conv::{conv2d_backward, conv2d_forward, Conv2dGrads, ConvGeometry};
pub use elementwise::{relu_backward, relu_forward, sigmoid, sigmoid_forward};
pub use loss::{
    balance_weight, class_balanced_ce_backward, class_balanced_ce_forward, standard_ce_backward,
    standard_ce_forward,
};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolIndices};
pub use upsample::{bilinear_kernel_1d, upsample_backward, upsample_forward, UPSAMPLE_FACTORS};
