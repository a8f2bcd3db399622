//! Layer primitives with analytic forward and backward passes.
//!
//! Every function here is pure: it reads its inputs and returns fresh
//! tensors. State that a layer needs between forward and backward (pooling
//! indices, batch statistics, dropout masks) is returned to the caller as an
//! explicit cache value.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod loss;
mod pool;
mod shuffle;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnParams};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_dim, ConvGrads, ConvParams};
pub use dropout::{dropout2d, dropout2d_backward, DropoutMask};
pub use loss::softmax_ce_loss;
pub use pool::{maxpool2d, maxpool2d_backward, maxunpool2d, maxunpool2d_backward, PoolIndices};
pub use shuffle::{depth_to_space, space_to_depth};
