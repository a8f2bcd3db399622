//! Executable layer graphs for the three segmentation networks.

mod build;
mod checkpoint;
mod graph;

pub use build::{build, build_resnet_mini_d2s, build_segnet_mini, build_vgg_mini_d2s};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use graph::{Layer, LayerKind, ModelGraph, ParamSlot, Phase};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    VggD2s,
    ResnetD2s,
    Segnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::VggD2s, ModelKind::ResnetD2s, ModelKind::Segnet];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::VggD2s => "vgg_d2s",
            ModelKind::ResnetD2s => "resnet_d2s",
            ModelKind::Segnet => "segnet",
        }
    }

    /// Stage widths of the desk-scale networks.
    pub fn default_widths(self) -> Vec<usize> {
        match self {
            ModelKind::VggD2s | ModelKind::Segnet => vec![16, 32, 64],
            ModelKind::ResnetD2s => vec![32, 64, 128],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Domain(format!(
                "unknown model '{s}' (expected one of vgg_d2s, resnet_d2s, segnet)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Output channels of each encoder stage. The number of stages fixes the
    /// downsample factor `r = 2^stages`.
    pub widths: Vec<usize>,
    /// Spatial dropout probability.
    pub dropout: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            widths: kind.default_widths(),
            dropout: 0.2,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    /// Two-stage (`r = 4`) variant used for end-to-end gradient checks.
    pub fn reduced(kind: ModelKind) -> Self {
        let widths = match kind {
            ModelKind::VggD2s | ModelKind::Segnet => vec![4, 8],
            ModelKind::ResnetD2s => vec![8, 32],
        };
        Self::new(kind).with_widths(widths)
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.widths.len()
    }
}
