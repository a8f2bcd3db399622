//! Foreground-centered patch sampling and color jitter.

use crate::error::{domain_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Sample;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Jitter magnitudes: additive brightness `±brightness`, multiplicative
/// contrast and saturation factors drawn from the given closed intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterRanges {
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: (0.8, 1.25),
            saturation: (0.8, 1.25),
        }
    }
}

impl JitterRanges {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
        }
    }
}

fn crop(t: &Tensor<f32>, top: usize, left: usize, size: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.c() * size * size);
    for c in 0..s.c() {
        for y in top..top + size {
            let row = s.offset(0, c, y, left);
            out.extend_from_slice(&t.data()[row..row + size]);
        }
    }
    Tensor::from_vec([1, s.c(), size, size], out)
}

/// Crops a `patch`×`patch` window centered on a random foreground pixel,
/// with the window clamped to the image. An empty mask yields a uniformly
/// placed window.
pub fn patch_sample(sample: &Sample, patch: usize, rng: &mut Rng) -> Result<Sample> {
    let s = sample.mask.shape();
    let (h, w) = (s.h(), s.w());
    if patch == 0 || !patch.is_multiple_of(8) {
        return Err(domain_err!("patch size {patch} must be a positive multiple of 8"));
    }
    if patch > h || patch > w {
        return Err(domain_err!("patch size {patch} exceeds image {h}x{w}"));
    }
    if patch == h && patch == w {
        return Ok(sample.clone());
    }
    let fg: Vec<usize> = (0..h * w).filter(|&i| sample.mask.data()[i] == 1.0).collect();
    let (top, left) = if fg.is_empty() {
        (
            rng.below((h - patch + 1) as u64) as usize,
            rng.below((w - patch + 1) as u64) as usize,
        )
    } else {
        let i = fg[rng.below(fg.len() as u64) as usize];
        let center = |p: usize, extent: usize| p.saturating_sub(patch / 2).min(extent - patch);
        (center(i / w, h), center(i % w, w))
    };
    Ok(Sample {
        image: crop(&sample.image, top, left, patch)?,
        mask: crop(&sample.mask, top, left, patch)?,
        seed: sample.seed,
    })
}

/// Brightness shift, then contrast about the image mean, then saturation
/// about per-pixel luma, then clamping to `[0, 1]`. Always draws exactly
/// three numbers from `rng`; a factor at its neutral value is skipped so
/// zero-width ranges return the input unchanged.
pub fn color_jitter(image: &Tensor<f32>, rng: &mut Rng, ranges: &JitterRanges) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.c() != 3 {
        return Err(crate::error::shape_err!("color jitter expects 3 channels, got {s}"));
    }
    let b = rng.range(-ranges.brightness, ranges.brightness);
    let c = rng.range(ranges.contrast.0, ranges.contrast.1);
    let sat = rng.range(ranges.saturation.0, ranges.saturation.1);
    let mut x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    if b != 0.0 {
        x.iter_mut().for_each(|v| *v += b);
    }
    if c != 1.0 {
        for n in 0..s.n() {
            let img = &mut x[n * s.sample()..(n + 1) * s.sample()];
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            img.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
        }
    }
    if sat != 1.0 {
        let plane = s.plane();
        for n in 0..s.n() {
            let img = &mut x[n * s.sample()..(n + 1) * s.sample()];
            for i in 0..plane {
                let luma: f64 = (0..3).map(|ch| LUMA[ch] * img[ch * plane + i]).sum();
                for ch in 0..3 {
                    let v = &mut img[ch * plane + i];
                    *v = luma + sat * (*v - luma);
                }
            }
        }
    }
    Tensor::from_vec(s, x.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}
