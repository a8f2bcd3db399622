//! Depth-to-space and its inverse.
//!
//! Channel-major ordering:
//! `out[n, c, h·r + i, w·r + j] = in[n, c·r² + i·r + j, h, w]`.
//! Both directions copy values without arithmetic, and each is the other's
//! backward pass.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

/// `(N, C·r², H, W) → (N, C, H·r, W·r)`.
pub fn depth_to_space<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::Domain("depth_to_space block size must be positive".into()));
    }
    let is = x.shape();
    let rr = r * r;
    if !is.c().is_multiple_of(rr) {
        return Err(shape_err!("depth_to_space: {} channels not divisible by {r}²", is.c()));
    }
    let os = Shape::new(is.n(), is.c() / rr, is.h() * r, is.w() * r);
    let mut out = Tensor::zeros(os)?;
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..os.n() {
        for c in 0..os.c() {
            for i in 0..r {
                for j in 0..r {
                    let ic = c * rr + i * r + j;
                    for h in 0..is.h() {
                        let row = is.offset(n, ic, h, 0);
                        let orow = os.offset(n, c, h * r + i, j);
                        for w in 0..is.w() {
                            dst[orow + w * r] = src[row + w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `(N, C, H·r, W·r) → (N, C·r², H, W)`; exact inverse of [`depth_to_space`].
pub fn space_to_depth<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::Domain("space_to_depth block size must be positive".into()));
    }
    let is = x.shape();
    if !is.h().is_multiple_of(r) || !is.w().is_multiple_of(r) {
        return Err(shape_err!("space_to_depth: {is} spatial dims not divisible by {r}"));
    }
    let rr = r * r;
    let os = Shape::new(is.n(), is.c() * rr, is.h() / r, is.w() / r);
    let mut out = Tensor::zeros(os)?;
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..is.n() {
        for c in 0..is.c() {
            for i in 0..r {
                for j in 0..r {
                    let oc = c * rr + i * r + j;
                    for h in 0..os.h() {
                        let orow = os.offset(n, oc, h, 0);
                        let irow = is.offset(n, c, h * r + i, j);
                        for w in 0..os.w() {
                            dst[orow + w] = src[irow + w * r];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
