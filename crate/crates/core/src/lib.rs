//! Decoder-free binary segmentation with a depth-to-space output stage.
//!
//! The crate holds everything needed to build, train, evaluate and profile
//! three small fully convolutional segmentation networks on the CPU:
//!
//! * `vgg_d2s`: a VGG-style encoder whose last feature map is lifted to
//!   `2·r²` channels by a 1×1 convolution and rearranged to full resolution
//!   with a single [`depth_to_space`](nn::depth_to_space).
//! * `resnet_d2s`: a residual encoder whose final `2·r²`-channel map feeds
//!   depth-to-space directly.
//! * `segnet`: an encoder-decoder baseline sharing the VGG encoder and
//!   upsampling with stored max-pooling indices.
//!
//! Layers are implemented by hand with explicit forward/backward pairs and
//! are generic over [`Real`] so the same code runs in `f32` for training and
//! in `f64` for finite-difference gradient checks.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod profiler;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelGraph, ModelKind};
pub use rng::Rng;
pub use scalar::Real;
pub use tensor::{Shape, Tensor};

/// Train or inference behaviour for batch normalization and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
