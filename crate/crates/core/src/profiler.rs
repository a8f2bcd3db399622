//! Static multiply-accumulate, parameter and activation accounting.
//!
//! Convolutions cost `K²·Cin·Cout·Hout·Wout` MACs per sample and batch
//! norm `2·C·H·W`. ReLU, pooling, dropout, residual adds and the
//! depth-to-space permutation cost no MACs; their work shows up only as
//! activation elements. One MAC is two FLOPs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::model::{LayerKind, ModelGraph, Phase};
use crate::scalar::Real;
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub phase: Phase,
    pub macs: u64,
    pub params: u64,
    /// Elements of the layer's output.
    pub activation_elems: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub model: String,
    pub input: Shape,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl CostReport {
    pub fn phase_macs(&self, phase: Phase) -> u64 {
        self.layers.iter().filter(|l| l.phase == phase).map(|l| l.macs).sum()
    }

    pub fn phases(&self) -> BTreeMap<Phase, u64> {
        let mut m = BTreeMap::new();
        for l in &self.layers {
            *m.entry(l.phase).or_default() += l.macs;
        }
        m
    }

    /// `layer <name> <phase> <macs> <params> <act_elems>` lines and a
    /// `total <macs> <params>` footer.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            writeln!(
                s,
                "layer {} {} {} {} {}",
                l.name,
                l.phase.name(),
                l.macs,
                l.params,
                l.activation_elems
            )
            .unwrap();
        }
        writeln!(s, "total {} {}", self.total_macs, self.total_params).unwrap();
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        writeln!(s, "# {} on input {}", self.model, self.input).unwrap();
        writeln!(
            s,
            "  {:<width$}  {:<9}  {:<8}  {:>14}  {:>10}  {:>12}",
            "name", "kind", "phase", "macs", "params", "act_elems"
        )
        .unwrap();
        for l in &self.layers {
            writeln!(
                s,
                "  {:<width$}  {:<9}  {:<8}  {:>14}  {:>10}  {:>12}",
                l.name,
                l.kind,
                l.phase.name(),
                l.macs,
                l.params,
                l.activation_elems
            )
            .unwrap();
        }
        for (phase, macs) in self.phases() {
            writeln!(s, "  {:<width$}  {:<9}  {:<8}  {:>14}", "", "", phase.name(), macs).unwrap();
        }
        writeln!(
            s,
            "  {:<width$}  {:<9}  {:<8}  {:>14}  {:>10}   (1 MAC = 2 FLOPs)",
            "TOTAL", "", "", self.total_macs, self.total_params
        )
        .unwrap();
        s
    }
}

pub fn count_macs<T: Real>(model: &ModelGraph<T>, input: Shape) -> Result<CostReport> {
    let shapes = model.infer_shapes(input)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        let out = shapes[i + 1];
        let (macs, params) = match &l.kind {
            LayerKind::Conv(p) => {
                let k = p.kernel() as u64;
                let (cin, cout) = (p.cin() as u64, p.cout() as u64);
                let spatial = (out.n() * out.h() * out.w()) as u64;
                (k * k * cin * cout * spatial, k * k * cin * cout + cout)
            }
            LayerKind::BatchNorm(p) => (2 * out.len() as u64, 2 * p.channels() as u64),
            _ => (0, 0),
        };
        layers.push(LayerCost {
            name: l.name.clone(),
            kind: l.kind.tag(),
            phase: l.phase,
            macs,
            params,
            activation_elems: out.len() as u64,
        });
    }
    Ok(CostReport {
        model: model.name().to_owned(),
        input,
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: CostReport,
    pub b: CostReport,
    /// `a.total_macs / b.total_macs`.
    pub ratio: f64,
}

impl Comparison {
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for r in [&self.a, &self.b] {
            writeln!(
                s,
                "model {} total_macs {} params {}",
                r.model, r.total_macs, r.total_params
            )
            .unwrap();
            for (phase, macs) in r.phases() {
                writeln!(s, "phase {} {} {}", r.model, phase.name(), macs).unwrap();
            }
        }
        writeln!(s, "ratio {} {} {:.6}", self.a.model, self.b.model, self.ratio).unwrap();
        s
    }
}

pub fn compare_models<T: Real>(a: &ModelGraph<T>, b: &ModelGraph<T>, input: Shape) -> Result<Comparison> {
    let a = count_macs(a, input)?;
    let b = count_macs(b, input)?;
    let ratio = a.total_macs as f64 / b.total_macs as f64;
    Ok(Comparison { a, b, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, ModelConfig, ModelKind};

    fn report(kind: ModelKind, h: usize) -> CostReport {
        let m = build::<f32>(&ModelConfig::new(kind)).unwrap();
        count_macs(&m, Shape::new(1, 3, h, h)).unwrap()
    }

    #[test]
    fn conv_formula_example() {
        let r = report(ModelKind::VggD2s, 64);
        // enc2.conv1: 3×3, 16 → 32 at 32×32
        let l = r.layers.iter().find(|l| l.name == "enc2.conv1").unwrap();
        assert_eq!(l.macs, 4_718_592);
        let d2s = r.layers.iter().find(|l| l.kind == "d2s").unwrap();
        assert_eq!(d2s.macs, 0);
    }

    #[test]
    fn totals_are_sums() {
        for kind in ModelKind::ALL {
            let r = report(kind, 64);
            assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
            assert_eq!(r.total_macs, r.phases().values().sum::<u64>());
            let m = build::<f32>(&ModelConfig::new(kind)).unwrap();
            assert_eq!(r.total_params as usize, m.param_count());
        }
    }

    #[test]
    fn batch_and_resolution_scaling() {
        let m = build::<f32>(&ModelConfig::new(ModelKind::ResnetD2s)).unwrap();
        let one = count_macs(&m, Shape::new(1, 3, 32, 32)).unwrap();
        let four = count_macs(&m, Shape::new(4, 3, 32, 32)).unwrap();
        let big = count_macs(&m, Shape::new(1, 3, 64, 64)).unwrap();
        assert_eq!(four.total_macs, 4 * one.total_macs);
        for (a, b) in one.layers.iter().zip(&big.layers) {
            if a.kind == "conv" {
                assert_eq!(b.macs, 4 * a.macs, "{}", a.name);
            }
        }
    }

    #[test]
    fn lines_format() {
        let r = report(ModelKind::VggD2s, 64);
        let text = r.to_lines();
        let last = text.lines().last().unwrap();
        assert_eq!(last, format!("total {} {}", r.total_macs, r.total_params));
        assert!(text.lines().next().unwrap().starts_with("layer enc1.conv1 encoder "));
    }
}
