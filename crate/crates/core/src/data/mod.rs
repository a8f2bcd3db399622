//! Synthetic road-extraction data: scene generation, file I/O, sampling
//! and augmentation.

mod augment;
mod dataset;
pub mod pnm;
mod scene;

pub use augment::{color_jitter, patch_sample, JitterRanges};
pub use dataset::{load_split, make_dataset, DatasetManifest, Split, MANIFEST_FILE};
pub use scene::{generate_road_scene, MAX_FOREGROUND_FRACTION};

use crate::tensor::Tensor;

/// An RGB image with its binary road mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, 3, H, W)`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, 1, H, W)`, values in `{0, 1}`.
    pub mask: Tensor<f32>,
    pub seed: u64,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.shape().h()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.data().iter().filter(|&&v| v == 1.0).count() as f64 / self.mask.len() as f64
    }
}
