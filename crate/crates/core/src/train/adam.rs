use crate::error::{Error, Result};
use crate::model::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `t` is the 1-based
/// step number. The gradient is checked before anything is modified.
pub fn adam_step(
    name: &str,
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    hp: &AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::Shape(format!(
            "{name}: param {} / grad {} / moments {},{} lengths differ",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Domain(format!("{name}: adam step number starts at 1")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("{name}: non-finite gradient at element {i}")));
    }
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i] as f64;
        let mi = hp.beta1 * m[i] as f64 + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i] as f64 + (1.0 - hp.beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = hp.lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        param[i] = (param[i] as f64 - update) as f32;
    }
    Ok(())
}

/// First and second moments for every trainable tensor of a model.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(model: &mut ModelGraph<f32>, hyper: AdamHyper) -> Self {
        let sizes: Vec<usize> = model
            .slots()
            .iter()
            .filter(|s| s.grad.is_some())
            .map(|s| s.value.len())
            .collect();
        Self {
            hyper,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&[f32], &[f32])> {
        self.m.iter().zip(&self.v).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Applies one update to every trainable tensor from its accumulated
    /// gradient. Fails without modifying anything if any gradient is
    /// non-finite.
    pub fn step(&mut self, model: &mut ModelGraph<f32>) -> Result<()> {
        let mut slots: Vec<_> = model.slots().into_iter().filter(|s| s.grad.is_some()).collect();
        if slots.len() != self.m.len() {
            return Err(Error::State(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                slots.len()
            )));
        }
        for s in &slots {
            let g = s.grad.as_deref().expect("filtered");
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "{}: non-finite gradient at element {i}",
                    s.name
                )));
            }
        }
        self.t += 1;
        for (k, s) in slots.iter_mut().enumerate() {
            let g = s.grad.as_deref().expect("filtered");
            adam_step(&s.name, s.value, g, &mut self.m[k], &mut self.v[k], self.t, &self.hyper)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward scalar Adam used as the reference trajectory.
    fn reference(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let hp = AdamHyper::new(1e-4);
        let mut p = vec![0.0f32; 4];
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        adam_step("p", &mut p, &[1.0; 4], &mut m, &mut v, 1, &hp).unwrap();
        for x in p {
            assert!((-x as f64 - 1e-4 / (1.0 + 1e-8)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let hp = AdamHyper::new(1e-2);
        let mut p = vec![0.25f32, -3.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=50 {
            adam_step("p", &mut p, &[0.0; 2], &mut m, &mut v, t, &hp).unwrap();
        }
        assert_eq!(p, vec![0.25, -3.0]);
    }

    #[test]
    fn quadratic_trajectory_matches_reference() {
        let hp = AdamHyper::new(0.1);
        let expected = reference(1.0, 0.1, 200);
        let mut x = [1.0f32];
        let (mut m, mut v) = ([0.0f32], [0.0f32]);
        for (t, want) in expected.iter().enumerate() {
            let g = [2.0 * x[0]];
            adam_step("x", &mut x, &g, &mut m, &mut v, t as u64 + 1, &hp).unwrap();
            assert!((x[0] as f64 - want).abs() < 1e-4, "step {t}: {} vs {want}", x[0]);
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
        assert!(expected.last().unwrap().abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let hp = AdamHyper::new(0.1);
        let mut p = vec![1.0f32; 2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let err = adam_step("enc1.conv1.weight", &mut p, &[0.0, f32::NAN], &mut m, &mut v, 1, &hp).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("enc1.conv1.weight")));
        assert_eq!(p, vec![1.0; 2]);
    }
}
