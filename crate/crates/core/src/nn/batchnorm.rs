//! Per-channel batch normalization over `(N, H, W)`.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T: Real = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
}

/// Statistics a forward pass used, needed again by backward.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real = f32> {
    pub mode: Mode,
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch in train mode; the running
    /// variance in eval mode.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Elements reduced per channel (`N·H·W`).
    pub count: usize,
}

impl<T: Real> BnParams<T> {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// averages. The variance is corrected to its unbiased estimate first.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        let bessel = T::from_f64_lossy(cache.count as f64 / (cache.count as f64 - 1.0));
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + m * cache.mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * cache.var[c] * bessel;
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c() != self.channels() {
            return Err(shape_err!(
                "batchnorm over {} channels got {}",
                self.channels(),
                x.shape()
            ));
        }
        let in_range = self.eps > 0.0 && self.momentum > 0.0 && self.momentum <= 1.0;
        if !in_range {
            return Err(Error::Domain(format!(
                "batchnorm eps {} / momentum {} out of range",
                self.eps, self.momentum
            )));
        }
        Ok(())
    }
}

fn channel_planes<T: Real>(x: &Tensor<T>, c: usize) -> impl Iterator<Item = &[T]> {
    let s = x.shape();
    (0..s.n()).map(move |n| {
        let o = s.offset(n, c, 0, 0);
        &x.data()[o..o + s.plane()]
    })
}

/// Normalizes `x` per channel and applies `gamma`/`beta`.
///
/// Train mode uses the batch statistics (and requires at least two
/// elements per channel); eval mode uses the running statistics. The
/// running statistics are not touched here: apply
/// [`BnParams::update_running`] with the returned cache.
pub fn batchnorm_forward<T: Real>(x: &Tensor<T>, p: &BnParams<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
    p.check(x)?;
    let s = x.shape();
    let count = s.n() * s.plane();
    let channels = s.c();
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::Domain(format!(
                    "batchnorm train mode needs ≥ 2 values per channel, got {count}"
                )));
            }
            let mut mean = Vec::with_capacity(channels);
            let mut var = Vec::with_capacity(channels);
            for c in 0..channels {
                // Two-pass in f64 for a stable variance.
                let sum: f64 = channel_planes(x, c).flat_map(|p| p.iter()).map(|v| v.as_f64()).sum();
                let mu = sum / count as f64;
                let sq: f64 = channel_planes(x, c)
                    .flat_map(|p| p.iter())
                    .map(|v| (v.as_f64() - mu).powi(2))
                    .sum();
                mean.push(T::from_f64_lossy(mu));
                var.push(T::from_f64_lossy(sq / count as f64));
            }
            (mean, var)
        }
        Mode::Eval => (p.running_mean.clone(), p.running_var.clone()),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v.as_f64() + p.eps).sqrt()))
        .collect();
    let mut out = Tensor::zeros(s)?;
    let plane = s.plane();
    for n in 0..s.n() {
        for c in 0..channels {
            let o = s.offset(n, c, 0, 0);
            let scale = p.gamma[c] * inv_std[c];
            let shift = p.beta[c] - mean[c] * scale;
            for (y, &v) in out.data_mut()[o..o + plane].iter_mut().zip(&x.data()[o..o + plane]) {
                *y = v * scale + shift;
            }
        }
    }
    Ok((
        out,
        BnCache {
            mode,
            mean,
            var,
            inv_std,
            count,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Real>(
    x: &Tensor<T>,
    p: &BnParams<T>,
    cache: &BnCache<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    p.check(x)?;
    x.same_shape(upstream, "batchnorm backward")?;
    let s = x.shape();
    let plane = s.plane();
    let channels = s.c();
    let mut gx = Tensor::zeros(s)?;
    let mut g_gamma = vec![T::zero(); channels];
    let mut g_beta = vec![T::zero(); channels];
    let m = T::from_usize(cache.count).expect("count fits");
    for c in 0..channels {
        let (mu, inv) = (cache.mean[c], cache.inv_std[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for n in 0..s.n() {
            let o = s.offset(n, c, 0, 0);
            for (&v, &dy) in x.data()[o..o + plane].iter().zip(&upstream.data()[o..o + plane]) {
                sum_dy = sum_dy + dy;
                sum_dy_xhat = sum_dy_xhat + dy * (v - mu) * inv;
            }
        }
        g_gamma[c] = sum_dy_xhat;
        g_beta[c] = sum_dy;
        let gamma_inv = p.gamma[c] * inv;
        for n in 0..s.n() {
            let o = s.offset(n, c, 0, 0);
            let (xs, dys) = (&x.data()[o..o + plane], &upstream.data()[o..o + plane]);
            let dst = &mut gx.data_mut()[o..o + plane];
            match cache.mode {
                Mode::Train => {
                    // dx = γ/σ · (dy − mean(dy) − x̂ · mean(dy·x̂))
                    let mean_dy = sum_dy / m;
                    let mean_dy_xhat = sum_dy_xhat / m;
                    for ((d, &v), &dy) in dst.iter_mut().zip(xs).zip(dys) {
                        let xhat = (v - mu) * inv;
                        *d = gamma_inv * (dy - mean_dy - xhat * mean_dy_xhat);
                    }
                }
                Mode::Eval => {
                    for (d, &dy) in dst.iter_mut().zip(dys) {
                        *d = gamma_inv * dy;
                    }
                }
            }
        }
    }
    Ok((gx, g_gamma, g_beta))
}
