//! Foreground intersection-over-union from pixel confusion counts.

use std::fmt::Write as _;
use std::ops::AddAssign;

use crate::data::Sample;
use crate::error::{domain_err, Error, Result};
use crate::model::ModelGraph;
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

/// Pixel counts with foreground (1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.true_pos += o.true_pos;
        self.false_pos += o.false_pos;
        self.false_neg += o.false_neg;
        self.true_neg += o.true_neg;
    }
}

fn binary<T: Real>(v: T, what: &str) -> Result<bool> {
    if v == T::zero() {
        Ok(false)
    } else if v == T::one() {
        Ok(true)
    } else {
        Err(domain_err!("{what} mask value {v} not in {{0, 1}}"))
    }
}

pub fn confusion_counts<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(domain_err!("mask shapes differ: {} vs {}", pred.shape(), gt.shape()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (binary(p, "prediction")?, binary(g, "ground-truth")?) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp + fn)`, or 1 when there is no foreground in either mask.
pub fn pixel_iou(c: &ConfusionCounts) -> f64 {
    let denom = c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        1.0
    } else {
        c.true_pos as f64 / denom as f64
    }
}

/// Foreground mask `(N, 1, H, W)` from two-channel logits: a pixel is
/// foreground when its foreground logit is at least the background one
/// (softmax probability ≥ 0.5).
pub fn predict_mask<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.c() != 2 {
        return Err(Error::Shape(format!("expected 2 logit channels, got {s}")));
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n() * plane);
    for n in 0..s.n() {
        let z = logits.sample(n);
        let (bg, fg) = z.split_at(plane);
        out.extend(
            bg.iter()
                .zip(fg)
                .map(|(&b, &f)| if f >= b { T::one() } else { T::zero() }),
        );
    }
    Tensor::from_vec(Shape::new(s.n(), 1, s.h(), s.w()), out)
}

/// Result of evaluating a model on a split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    /// IoU of the summed counts.
    pub iou: f64,
    /// Mean of per-image IoUs; diagnostic only.
    pub mean_image_iou: f64,
    pub images: usize,
}

impl EvalReport {
    pub fn from_image_counts(per_image: &[ConfusionCounts]) -> Self {
        let mut counts = ConfusionCounts::default();
        for &c in per_image {
            counts += c;
        }
        let mean_image_iou = if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().map(pixel_iou).sum::<f64>() / per_image.len() as f64
        };
        EvalReport {
            counts,
            iou: pixel_iou(&counts),
            mean_image_iou,
            images: per_image.len(),
        }
    }

    /// `iou`, `tp`, `fp`, `fn`, `tn` lines.
    pub fn to_lines(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        writeln!(s, "iou {:.6}", self.iou).unwrap();
        writeln!(s, "tp {}", c.true_pos).unwrap();
        writeln!(s, "fp {}", c.false_pos).unwrap();
        writeln!(s, "fn {}", c.false_neg).unwrap();
        writeln!(s, "tn {}", c.true_neg).unwrap();
        s
    }
}

/// Eval-mode IoU over `samples`, aggregated from global pixel counts.
pub fn dataset_iou(model: &mut ModelGraph<f32>, samples: &[Sample], batch: usize) -> Result<EvalReport> {
    let batch = batch.max(1);
    let mut per_image = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch) {
        let images: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.image).collect();
        let x = Tensor::stack(&images)?;
        let pred = predict_mask(&model.predict(&x)?)?;
        for (i, s) in chunk.iter().enumerate() {
            let p = Tensor::from_vec(s.mask.shape(), pred.sample(i).to_vec())?;
            per_image.push(confusion_counts(&p, &s.mask)?);
        }
    }
    Ok(EvalReport::from_image_counts(&per_image))
}
