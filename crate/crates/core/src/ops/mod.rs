//! Forward kernels and their gradient rules.
//!
//! Every function here is pure. The autograd tape in [`crate::autograd`]
//! composes them; tests check each backward rule against finite differences.

pub mod activation;
pub mod conv;
pub mod patches;
pub mod pool;
pub mod resize;
pub mod shuffle;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d, conv2d_backward, conv_out_dim, ConvGrads};
pub use patches::{coverage, fold_avg, fold_sum, unfold, PatchGeom};
pub use pool::{avg_pool_global, avg_pool_global_backward};
pub use resize::{resize_bicubic, ResizePlan};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
