//! 2×2 max pooling with recorded argmax offsets, and the matching unpool.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

const WINDOW: usize = 2;

/// Argmax locations of a max-pool, one per pooled output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    /// Shape of the pooled output (and of `offsets`).
    pub shape: Shape,
    /// Shape of the tensor that was pooled.
    pub input_shape: Shape,
    /// Flat offset into the pooled input of each selected maximum.
    pub offsets: Vec<usize>,
}

impl PoolIndices {
    /// Checks that every offset lies inside its own pooling window.
    pub fn validate(&self) -> Result<()> {
        let (s, is) = (self.shape, self.input_shape);
        if self.offsets.len() != s.len()
            || is.0[..2] != s.0[..2]
            || is.h() != s.h() * WINDOW
            || is.w() != s.w() * WINDOW
        {
            return Err(Error::Integrity(format!(
                "pool indices {s} inconsistent with input {is}"
            )));
        }
        let mut i = 0;
        for n in 0..s.n() {
            for c in 0..s.c() {
                for y in 0..s.h() {
                    for x in 0..s.w() {
                        let off = self.offsets[i];
                        i += 1;
                        let base = is.offset(n, c, y * WINDOW, x * WINDOW);
                        let inside = off >= base && (off - base) / is.w() < WINDOW && (off - base) % is.w() < WINDOW;
                        if !inside {
                            return Err(Error::Integrity(format!(
                                "offset {off} outside window at ({n},{c},{y},{x})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Max over non-overlapping 2×2 windows. Ties go to the lowest flat offset.
pub fn maxpool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let is = x.shape();
    if !is.h().is_multiple_of(WINDOW) || !is.w().is_multiple_of(WINDOW) {
        return Err(shape_err!("maxpool needs even spatial dims, got {is}"));
    }
    let os = Shape::new(is.n(), is.c(), is.h() / WINDOW, is.w() / WINDOW);
    let mut out = Vec::with_capacity(os.len());
    let mut offsets = Vec::with_capacity(os.len());
    let data = x.data();
    for n in 0..os.n() {
        for c in 0..os.c() {
            for y in 0..os.h() {
                for xo in 0..os.w() {
                    let base = is.offset(n, c, y * WINDOW, xo * WINDOW);
                    let mut best = base;
                    // Row-major scan with strict `>` keeps the lowest offset on ties.
                    for dy in 0..WINDOW {
                        for dx in 0..WINDOW {
                            let o = base + dy * is.w() + dx;
                            if data[o] > data[best] {
                                best = o;
                            }
                        }
                    }
                    out.push(data[best]);
                    offsets.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(os, out)?,
        PoolIndices {
            shape: os,
            input_shape: is,
            offsets,
        },
    ))
}

/// Places each value of `y` at its recorded offset in a zero tensor of
/// `out_shape`.
pub fn maxunpool2d<T: Real>(y: &Tensor<T>, idx: &PoolIndices, out_shape: Shape) -> Result<Tensor<T>> {
    if y.shape() != idx.shape {
        return Err(shape_err!(
            "unpool input {} does not match indices {}",
            y.shape(),
            idx.shape
        ));
    }
    if out_shape != idx.input_shape {
        return Err(shape_err!(
            "unpool output {out_shape} does not match pooled input {}",
            idx.input_shape
        ));
    }
    idx.validate()?;
    let mut out = Tensor::zeros(out_shape)?;
    let dst = out.data_mut();
    for (&v, &o) in y.data().iter().zip(&idx.offsets) {
        dst[o] = v;
    }
    Ok(out)
}

/// Gathers the upstream gradient at the stored offsets.
pub fn maxunpool2d_backward<T: Real>(upstream: &Tensor<T>, idx: &PoolIndices) -> Result<Tensor<T>> {
    if upstream.shape() != idx.input_shape {
        return Err(shape_err!(
            "unpool backward: upstream {} vs {}",
            upstream.shape(),
            idx.input_shape
        ));
    }
    let src = upstream.data();
    Tensor::from_vec(idx.shape, idx.offsets.iter().map(|&o| src[o]).collect())
}

/// Routes the upstream gradient to the argmax positions only.
pub fn maxpool2d_backward<T: Real>(upstream: &Tensor<T>, idx: &PoolIndices) -> Result<Tensor<T>> {
    maxunpool2d(upstream, idx, idx.input_shape)
}
