//! Finite-difference checks of every differentiable op and of whole reduced
//! models.
//!
//! Tensor-valued ops are checked through the scalar `L = Σ op(x) · R` with a
//! random `R`, whose analytic gradient is the op's backward applied to `R`.

use std::fmt::Write;

use super::{finite_diff_grad, max_rel_err, rel_err, FD_EPS, GRAD_TOL};
use crate::error::Result;
use crate::model::{build, LayerKind, ModelConfig, ModelGraph, ModelKind};
use crate::nn::{self, BnParams, ConvParams};
use crate::rng::Rng;
use crate::tensor::{elementwise_add, elementwise_add_backward, Shape, Tensor};
use crate::Mode;

/// Random cases per op.
pub const CASES: usize = 24;
/// Parameter elements probed per parameter tensor in the model checks.
const PROBES_PER_TENSOR: usize = 4;
/// Step for whole-model probes; small enough that one step rarely moves a
/// ReLU or pooling decision anywhere downstream.
const MODEL_FD_EPS: f64 = 1e-5;

/// A deliberately wrong backward, used to show that the suite detects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Weight gradient of conv2d computed with a flipped kernel.
    FlippedConvWeightGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub cases: usize,
    /// Gradient elements compared.
    pub checked: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRAD_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub seed: u64,
    pub ops: Vec<OpReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.ops.iter().map(|o| o.max_rel_err).fold(0.0, f64::max)
    }

    /// One `op <name> cases <n> checked <n> max_rel_err <e> ok|FAIL` line per
    /// op, then `result ok|FAIL`.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
        for op in &self.ops {
            writeln!(
                s,
                "op {} cases {} checked {} max_rel_err {:.3e} {}",
                op.name,
                op.cases,
                op.checked,
                op.max_rel_err,
                verdict(op.passed())
            )
            .unwrap();
        }
        writeln!(s, "result {}", verdict(self.passed())).unwrap();
        s
    }
}

fn random(shape: impl Into<Shape>, rng: &mut Rng) -> Result<Tensor<f64>> {
    let shape = shape.into();
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.range(-1.0, 1.0)).collect())
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct Acc {
    cases: usize,
    checked: usize,
    worst: f64,
}

impl Acc {
    /// Compares `analytic` against the central difference of `f` at `x`.
    fn compare(&mut self, analytic: &[f64], f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Result<()> {
        let numeric = finite_diff_grad(f, x, FD_EPS)?;
        self.worst = self.worst.max(max_rel_err(analytic, numeric.data()));
        self.checked += analytic.len();
        Ok(())
    }

    fn report(self, name: &str) -> OpReport {
        OpReport {
            name: name.to_string(),
            cases: self.cases,
            checked: self.checked,
            max_rel_err: self.worst,
        }
    }
}

fn vec_tensor(v: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_vec([1, 1, 1, v.len()], v.to_vec())
}

fn check_conv(rng: &mut Rng, fault: Fault) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let k = if rng.bernoulli(0.5) { 3 } else { 1 };
        let (cin, cout) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let stride = rng.int_inclusive(1, 2);
        let pad = if k == 3 { rng.int_inclusive(0, 1) } else { 0 };
        let (h, w) = (rng.int_inclusive(k, 6), rng.int_inclusive(k, 6));
        let x = random([rng.int_inclusive(1, 2), cin, h, w], rng)?;
        let weight = random([cout, cin, k, k], rng)?;
        let bias: Vec<f64> = (0..cout).map(|_| rng.range(-1.0, 1.0)).collect();
        let p = ConvParams::new(weight, bias, stride, pad)?;
        let r = random(p.output_shape(x.shape())?, rng)?;
        let mut g = nn::conv2d_backward(&x, &p, &r)?;
        if fault == Fault::FlippedConvWeightGrad {
            let s = g.weight.shape();
            let orig = g.weight.clone();
            for (o, i, ky, kx) in (0..s.n())
                .flat_map(|o| (0..s.c()).map(move |i| (o, i)))
                .flat_map(|(o, i)| (0..k).flat_map(move |ky| (0..k).map(move |kx| (o, i, ky, kx))))
            {
                g.weight.set(o, i, ky, kx, orig.get(o, i, k - 1 - ky, k - 1 - kx));
            }
        }
        acc.compare(g.x.data(), |x| dot(&nn::conv2d_forward(x, &p).unwrap(), &r), &x)?;
        acc.compare(
            g.weight.data(),
            |wt| {
                let q = ConvParams {
                    weight: wt.clone(),
                    ..p.clone()
                };
                dot(&nn::conv2d_forward(&x, &q).unwrap(), &r)
            },
            &p.weight,
        )?;
        acc.compare(
            &g.bias,
            |b| {
                let q = ConvParams {
                    bias: b.data().to_vec(),
                    ..p.clone()
                };
                dot(&nn::conv2d_forward(&x, &q).unwrap(), &r)
            },
            &vec_tensor(&p.bias)?,
        )?;
        acc.cases += 1;
    }
    Ok(acc.report("conv2d"))
}

fn check_batchnorm(rng: &mut Rng, mode: Mode) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let c = rng.int_inclusive(1, 3);
        let x = random(
            [
                rng.int_inclusive(1, 2),
                c,
                rng.int_inclusive(2, 4),
                rng.int_inclusive(2, 4),
            ],
            rng,
        )?;
        let mut p = BnParams::<f64>::new(c);
        for ch in 0..c {
            p.gamma[ch] = rng.range(0.5, 1.5);
            p.beta[ch] = rng.range(-0.5, 0.5);
            p.running_mean[ch] = rng.range(-0.5, 0.5);
            p.running_var[ch] = rng.range(0.5, 2.0);
        }
        let r = random(x.shape(), rng)?;
        let (_, cache) = nn::batchnorm_forward(&x, &p, mode)?;
        let (gx, gg, gb) = nn::batchnorm_backward(&x, &p, &cache, &r)?;
        let run = |x: &Tensor<f64>, p: &BnParams<f64>| dot(&nn::batchnorm_forward(x, p, mode).unwrap().0, &r);
        acc.compare(gx.data(), |x| run(x, &p), &x)?;
        acc.compare(
            &gg,
            |g| {
                run(
                    &x,
                    &BnParams {
                        gamma: g.data().to_vec(),
                        ..p.clone()
                    },
                )
            },
            &vec_tensor(&p.gamma)?,
        )?;
        acc.compare(
            &gb,
            |b| {
                run(
                    &x,
                    &BnParams {
                        beta: b.data().to_vec(),
                        ..p.clone()
                    },
                )
            },
            &vec_tensor(&p.beta)?,
        )?;
        acc.cases += 1;
    }
    let name = match mode {
        Mode::Train => "batchnorm_train",
        Mode::Eval => "batchnorm_eval",
    };
    Ok(acc.report(name))
}

fn small_shape(rng: &mut Rng) -> Shape {
    Shape([
        rng.int_inclusive(1, 2),
        rng.int_inclusive(1, 3),
        rng.int_inclusive(1, 5),
        rng.int_inclusive(1, 5),
    ])
}

fn check_relu(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let s = small_shape(rng);
        // Stay clear of the kink at 0.
        let x = Tensor::from_vec(
            s,
            (0..s.len())
                .map(|_| {
                    let m = rng.range(0.05, 1.0);
                    if rng.bernoulli(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect(),
        )?;
        let r = random(s, rng)?;
        let g = nn::relu_backward(&x, &r)?;
        acc.compare(g.data(), |x| dot(&nn::relu(x), &r), &x)?;
        acc.cases += 1;
    }
    Ok(acc.report("relu"))
}

/// Distinct values at least 0.05 apart, so no window has a near tie.
fn spread(shape: Shape, rng: &mut Rng) -> Result<Tensor<f64>> {
    let mut v: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.05 - 1.0).collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(shape, v)
}

fn pool_shape(rng: &mut Rng) -> Shape {
    Shape([
        rng.int_inclusive(1, 2),
        rng.int_inclusive(1, 3),
        2 * rng.int_inclusive(1, 3),
        2 * rng.int_inclusive(1, 3),
    ])
}

fn check_maxpool(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let x = spread(pool_shape(rng), rng)?;
        let (y, idx) = nn::maxpool2d(&x)?;
        let r = random(y.shape(), rng)?;
        let g = nn::maxpool2d_backward(&r, &idx)?;
        acc.compare(g.data(), |x| dot(&nn::maxpool2d(x).unwrap().0, &r), &x)?;
        acc.cases += 1;
    }
    Ok(acc.report("maxpool2d"))
}

fn check_maxunpool(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let x = spread(pool_shape(rng), rng)?;
        let (y, idx) = nn::maxpool2d(&x)?;
        let r = random(x.shape(), rng)?;
        let g = nn::maxunpool2d_backward(&r, &idx)?;
        acc.compare(g.data(), |y| dot(&nn::maxunpool2d(y, &idx, x.shape()).unwrap(), &r), &y)?;
        acc.cases += 1;
    }
    Ok(acc.report("maxunpool2d"))
}

fn check_dropout(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for case in 0..CASES {
        let x = random(small_shape(rng), rng)?;
        let p = [0.2, 0.5][case % 2];
        let mask_seed = rng.next_u64();
        let (_, mask) = nn::dropout2d(&x, p, Mode::Train, &mut Rng::new(mask_seed))?;
        let r = random(x.shape(), rng)?;
        let g = nn::dropout2d_backward(&r, &mask)?;
        acc.compare(
            g.data(),
            |x| {
                dot(
                    &nn::dropout2d(x, p, Mode::Train, &mut Rng::new(mask_seed)).unwrap().0,
                    &r,
                )
            },
            &x,
        )?;
        acc.cases += 1;
    }
    Ok(acc.report("dropout2d"))
}

fn check_shuffle(rng: &mut Rng, forward_d2s: bool) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let r_ = rng.int_inclusive(1, 3);
        let (n, c) = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 2));
        let (h, w) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        if forward_d2s {
            let x = random([n, c * r_ * r_, h, w], rng)?;
            let r = random([n, c, h * r_, w * r_], rng)?;
            let g = nn::space_to_depth(&r, r_)?;
            acc.compare(g.data(), |x| dot(&nn::depth_to_space(x, r_).unwrap(), &r), &x)?;
        } else {
            let x = random([n, c, h * r_, w * r_], rng)?;
            let r = random([n, c * r_ * r_, h, w], rng)?;
            let g = nn::depth_to_space(&r, r_)?;
            acc.compare(g.data(), |x| dot(&nn::space_to_depth(x, r_).unwrap(), &r), &x)?;
        }
        acc.cases += 1;
    }
    Ok(acc.report(if forward_d2s {
        "depth_to_space"
    } else {
        "space_to_depth"
    }))
}

fn check_add(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let s = small_shape(rng);
        let (a, b, r) = (random(s, rng)?, random(s, rng)?, random(s, rng)?);
        let (ga, gb) = elementwise_add_backward(&r);
        acc.compare(ga.data(), |a| dot(&elementwise_add(a, &b).unwrap(), &r), &a)?;
        acc.compare(gb.data(), |b| dot(&elementwise_add(&a, b).unwrap(), &r), &b)?;
        acc.cases += 1;
    }
    Ok(acc.report("elementwise_add"))
}

fn random_mask(shape: Shape, rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.bernoulli(0.3) as u8 as f64).collect(),
    )
}

fn check_loss(rng: &mut Rng) -> Result<OpReport> {
    let mut acc = Acc::default();
    for _ in 0..CASES {
        let (n, h, w) = (
            rng.int_inclusive(1, 2),
            rng.int_inclusive(1, 4),
            rng.int_inclusive(1, 4),
        );
        let z = random([n, 2, h, w], rng)?.map(|v| 3.0 * v);
        let t = random_mask(Shape([n, 1, h, w]), rng)?;
        let weights = [rng.range(0.5, 2.0), rng.range(0.5, 4.0)];
        let (_, g) = nn::softmax_ce_loss(&z, &t, weights)?;
        acc.compare(g.data(), |z| nn::softmax_ce_loss(z, &t, weights).unwrap().0, &z)?;
        acc.cases += 1;
    }
    Ok(acc.report("softmax_ce_loss"))
}

/// Which side of every ReLU kink and max-pool choice the last forward was
/// on. A finite difference is only meaningful when `x ± eps` agree.
fn activation_pattern(model: &ModelGraph<f64>) -> Vec<u64> {
    let nodes = model.recorded_activations().expect("forward recorded");
    let mut out = Vec::new();
    for layer in &model.layers {
        let x = &nodes[layer.input];
        match layer.kind {
            LayerKind::Relu => out.extend(x.data().iter().map(|&v| (v > 0.0) as u64)),
            LayerKind::MaxPool => out.extend(
                nn::maxpool2d(x)
                    .expect("recorded pool input")
                    .1
                    .offsets
                    .iter()
                    .map(|&o| o as u64),
            ),
            _ => {}
        }
    }
    out
}

/// Loss of one train-mode forward with a fixed dropout stream.
fn model_loss(model: &mut ModelGraph<f64>, x: &Tensor<f64>, t: &Tensor<f64>, seed: u64) -> Result<(f64, Tensor<f64>)> {
    let logits = model.forward(x, Mode::Train, Some(&mut Rng::new(seed)))?;
    nn::softmax_ce_loss(&logits, t, [1.0, 3.0])
}

/// End-to-end loss gradient of a reduced model with respect to sampled
/// elements of every parameter tensor and of the input. Probes whose
/// `± eps` perturbation flips a ReLU or max-pool decision are redrawn.
fn check_model(kind: ModelKind, rng: &mut Rng) -> Result<OpReport> {
    let cfg = ModelConfig::reduced(kind).with_seed(rng.next_u64());
    let mut model: ModelGraph<f64> = build(&cfg)?;
    let x = random([2, 3, 16, 16], rng)?;
    let t = random_mask(Shape([2, 1, 16, 16]), rng)?;
    let drop_seed = rng.next_u64();

    let (_, g) = model_loss(&mut model, &x, &t, drop_seed)?;
    let base = activation_pattern(&model);
    model.zero_grad();
    model.backward(&g)?;
    let grads: Vec<Option<Vec<f64>>> = model.slots().into_iter().map(|s| s.grad.map(|g| g.to_vec())).collect();

    let mut acc = Acc::default();
    let mut probe = |model: &mut ModelGraph<f64>, slot: usize, i: usize, analytic: f64| -> Result<bool> {
        let eval = |delta: f64, model: &mut ModelGraph<f64>| -> Result<(f64, Vec<u64>)> {
            let orig = model.slots()[slot].value[i];
            model.slots()[slot].value[i] = orig + delta;
            let r = model_loss(model, &x, &t, drop_seed);
            model.slots()[slot].value[i] = orig;
            Ok((r?.0, activation_pattern(model)))
        };
        let (plus, pp) = eval(MODEL_FD_EPS, model)?;
        let (minus, pm) = eval(-MODEL_FD_EPS, model)?;
        if pp != base || pm != base {
            return Ok(false);
        }
        acc.worst = acc.worst.max(rel_err(analytic, (plus - minus) / (2.0 * MODEL_FD_EPS)));
        acc.checked += 1;
        Ok(true)
    };
    let mut unprobed = false;
    for (slot, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let mut done = 0;
        for _ in 0..8 * PROBES_PER_TENSOR {
            if done == PROBES_PER_TENSOR {
                break;
            }
            let i = rng.below(grad.len() as u64) as usize;
            if probe(&mut model, slot, i, grad[i])? {
                done += 1;
            }
        }
        unprobed |= done == 0;
    }
    if unprobed {
        acc.worst = f64::INFINITY;
    }
    let cases = acc.checked;
    let mut report = acc.report(&format!("model_{}", kind.name()));
    report.cases = cases;
    Ok(report)
}

/// Runs every check. Deterministic in `seed`.
pub fn run_suite(seed: u64, fault: Fault) -> Result<SuiteReport> {
    let mut stream = 0u64;
    let mut next = || {
        stream += 1;
        Rng::derive(seed, stream)
    };
    let mut ops = vec![
        check_conv(&mut next(), fault)?,
        check_batchnorm(&mut next(), Mode::Train)?,
        check_batchnorm(&mut next(), Mode::Eval)?,
        check_relu(&mut next())?,
        check_maxpool(&mut next())?,
        check_maxunpool(&mut next())?,
        check_dropout(&mut next())?,
        check_shuffle(&mut next(), true)?,
        check_shuffle(&mut next(), false)?,
        check_add(&mut next())?,
        check_loss(&mut next())?,
    ];
    for kind in ModelKind::ALL {
        ops.push(check_model(kind, &mut next())?);
    }
    Ok(SuiteReport { seed, ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_suite(1, Fault::None).unwrap();
        assert!(report.passed(), "{}", report.to_lines());
        assert!(report.ops.iter().all(|o| o.cases >= 20), "{}", report.to_lines());
    }

    #[test]
    fn flipped_conv_gradient_is_caught() {
        let mut rng = Rng::new(3);
        assert!(!check_conv(&mut rng, Fault::FlippedConvWeightGrad).unwrap().passed());
    }

    #[test]
    fn model_checks_probe_every_tensor_across_seeds() {
        for seed in 0..12 {
            let mut stream = 100;
            for kind in ModelKind::ALL {
                stream += 1;
                let r = check_model(kind, &mut Rng::derive(seed, stream)).unwrap();
                assert!(r.passed(), "seed {seed}: {} {}", r.name, r.max_rel_err);
            }
        }
    }
}
