//! Central finite differences and the gradient-check suite built on them.

mod suite;

pub use suite::{run_suite, Fault, OpReport, SuiteReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for [`rel_err`], so exact zeros compare as absolute
/// error against a tiny scale instead of dividing by zero.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Tolerance every analytic gradient must meet.
pub const GRAD_TOL: f64 = 1e-3;

/// Step used by the suite.
pub const FD_EPS: f64 = 1e-4;

/// Central-difference gradient of scalar `f` at `x`:
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Domain(format!("finite_diff_grad: eps must be > 0, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape())?;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite objective at element {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest elementwise [`rel_err`]; infinite when lengths differ.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.len() != numeric.len() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
