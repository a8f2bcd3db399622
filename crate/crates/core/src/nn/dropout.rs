use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::Mode;

/// Per-`(n, c)` plane multiplier: 0 for dropped planes, `1/(1−p)` for kept.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T: Real = f32> {
    pub scale: Vec<T>,
}

/// Spatial dropout: zeroes whole channel planes with probability `p` in
/// train mode and rescales survivors by `1/(1−p)`. Identity in eval mode
/// and for `p = 0`, in which case no random numbers are drawn.
pub fn dropout2d<T: Real>(x: &Tensor<T>, p: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout probability {p} not in [0, 1)")));
    }
    let s = x.shape();
    let planes = s.n() * s.c();
    if mode == Mode::Eval || p == 0.0 {
        return Ok((
            x.clone(),
            DropoutMask {
                scale: vec![T::one(); planes],
            },
        ));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let scale: Vec<T> = (0..planes)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask { scale };
    let out = apply(x, &mask)?;
    Ok((out, mask))
}

pub fn dropout2d_backward<T: Real>(upstream: &Tensor<T>, mask: &DropoutMask<T>) -> Result<Tensor<T>> {
    apply(upstream, mask)
}

fn apply<T: Real>(x: &Tensor<T>, mask: &DropoutMask<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if mask.scale.len() != s.n() * s.c() {
        return Err(Error::Shape(format!(
            "dropout mask of {} planes for {s}",
            mask.scale.len()
        )));
    }
    let mut out = x.clone();
    for (plane, &k) in out.data_mut().chunks_exact_mut(s.plane()).zip(&mask.scale) {
        for v in plane {
            *v = *v * k;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let mut rng = Rng::new(0);
        let x = Tensor::<f32>::kaiming_init([2, 3, 4, 4], 1, &mut rng).unwrap();
        assert_eq!(dropout2d(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout2d(&x, 0.7, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(matches!(
            dropout2d(&x, 1.0, Mode::Train, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn monte_carlo_drop_rate_and_mean() {
        let mut rng = Rng::new(1234);
        let x = Tensor::<f64>::from_vec([1, 4, 1, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.25, -2.0]).unwrap();
        let trials = 10_000;
        let mut dropped = 0usize;
        let mut acc = vec![0.0; x.len()];
        for _ in 0..trials {
            let (y, mask) = dropout2d(&x, 0.5, Mode::Train, &mut rng).unwrap();
            dropped += mask.scale.iter().filter(|&&k| k == 0.0).count();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        let frac = dropped as f64 / (trials * 4) as f64;
        assert!((frac - 0.5).abs() <= 0.02, "drop fraction {frac}");
        for (a, v) in acc.iter().zip(x.data()) {
            // Var of one draw is v², so the mean's std is |v|/100.
            assert!((a / trials as f64 - v).abs() <= 0.05 * v.abs().max(1.0), "{a} vs {v}");
        }
    }

    #[test]
    fn whole_planes_dropped() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f32>::full([3, 5, 3, 3], 1.0).unwrap();
        let (y, _) = dropout2d(&x, 0.5, Mode::Train, &mut rng).unwrap();
        for plane in y.data().chunks(9) {
            assert!(plane.iter().all(|&v| v == plane[0]));
            assert!(plane[0] == 0.0 || plane[0] == 2.0);
        }
    }
}
