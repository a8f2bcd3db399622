use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Class-weighted two-class softmax cross-entropy.
///
/// `logits` is `(N, 2, H, W)` and `target` is `(N, 1, H, W)` with values in
/// `{0, 1}`. Each pixel contributes `−w[t]·log softmax(z)[t]` and the sum is
/// divided by `Σ w[t]` over all pixels. Returns the loss and its gradient
/// with respect to the logits, `w[t]·(softmax(z) − onehot(t)) / Σ w[t]`.
pub fn softmax_ce_loss<T: Real>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    class_weights: [f64; 2],
) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if s.c() != 2 {
        return Err(shape_err!("loss expects 2 logit channels, got {s}"));
    }
    let ts = target.shape();
    if ts.c() != 1 || ts.n() != s.n() || ts.h() != s.h() || ts.w() != s.w() {
        return Err(shape_err!("target {ts} does not match logits {s}"));
    }
    if class_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::Domain(format!(
            "class weights must be positive, got {class_weights:?}"
        )));
    }
    let plane = s.plane();
    let mut labels = Vec::with_capacity(target.len());
    let mut total_weight = 0.0;
    for &t in target.data() {
        let label = if t == T::zero() {
            0
        } else if t == T::one() {
            1
        } else {
            return Err(Error::Domain(format!("target value {t} not in {{0, 1}}")));
        };
        total_weight += class_weights[label];
        labels.push(label);
    }
    let mut grad = Tensor::zeros(s)?;
    let mut loss = 0.0;
    let z = logits.data();
    for n in 0..s.n() {
        let z0 = &z[s.offset(n, 0, 0, 0)..][..plane];
        let z1 = &z[s.offset(n, 1, 0, 0)..][..plane];
        for i in 0..plane {
            let label = labels[n * plane + i];
            let w = class_weights[label];
            let (a, b) = (z0[i].as_f64(), z1[i].as_f64());
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let picked = if label == 0 { a } else { b };
            loss += w * (lse - picked);
            let p1 = (b - lse).exp();
            let p0 = (a - lse).exp();
            let scale = w / total_weight;
            let g0 = scale * (p0 - if label == 0 { 1.0 } else { 0.0 });
            let g1 = scale * (p1 - if label == 1 { 1.0 } else { 0.0 });
            let gd = grad.data_mut();
            gd[s.offset(n, 0, 0, 0) + i] = T::from_f64_lossy(g0);
            gd[s.offset(n, 1, 0, 0) + i] = T::from_f64_lossy(g1);
        }
    }
    Ok((loss / total_weight, grad))
}
