//! Builders for the three desk-scale architectures.

use crate::error::{Error, Result};
use crate::nn::{BnParams, ConvParams};
use crate::rng::Rng;
use crate::scalar::Real;

use super::graph::{Layer, LayerKind, ModelGraph, Phase};
use super::{ModelConfig, ModelKind};

/// Builds whichever architecture `cfg.kind` names.
pub fn build<T: Real>(cfg: &ModelConfig) -> Result<ModelGraph<T>> {
    match cfg.kind {
        ModelKind::VggD2s => build_vgg_mini_d2s(cfg),
        ModelKind::ResnetD2s => build_resnet_mini_d2s(cfg),
        ModelKind::Segnet => build_segnet_mini(cfg),
    }
}

struct Builder<T: Real> {
    layers: Vec<Layer<T>>,
    rng: Rng,
    phase: Phase,
}

impl<T: Real> Builder<T> {
    fn new(seed: u64) -> Self {
        Self {
            layers: Vec::new(),
            rng: Rng::new(seed),
            phase: Phase::Encoder,
        }
    }

    /// Node id of the most recent output.
    fn last(&self) -> usize {
        self.layers.len()
    }

    fn push_from(&mut self, name: String, kind: LayerKind<T>, input: usize) -> usize {
        self.layers.push(Layer::new(name, kind, self.phase, input));
        self.last()
    }

    fn push(&mut self, name: String, kind: LayerKind<T>) -> usize {
        let input = self.last();
        self.push_from(name, kind, input)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_from(
        &mut self,
        name: String,
        input: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<usize> {
        let pad = kernel / 2;
        let p = ConvParams::kaiming(cin, cout, kernel, stride, pad, &mut self.rng)?;
        Ok(self.push_from(name, LayerKind::Conv(p), input))
    }

    fn conv(&mut self, name: String, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<usize> {
        let input = self.last();
        self.conv_from(name, input, cin, cout, kernel, stride)
    }

    fn conv_bn_relu(&mut self, prefix: &str, j: usize, cin: usize, cout: usize) -> Result<usize> {
        self.conv(format!("{prefix}.conv{j}"), cin, cout, 3, 1)?;
        self.push(format!("{prefix}.bn{j}"), LayerKind::BatchNorm(BnParams::new(cout)));
        Ok(self.push(format!("{prefix}.relu{j}"), LayerKind::Relu))
    }

    fn finish(self, cfg: &ModelConfig) -> Result<ModelGraph<T>> {
        ModelGraph::from_layers(cfg.clone(), self.layers)
    }
}

fn check_cfg(cfg: &ModelConfig) -> Result<()> {
    if cfg.widths.is_empty() || cfg.widths.contains(&0) {
        return Err(Error::Build(format!("stage widths must be positive: {:?}", cfg.widths)));
    }
    if cfg.widths.len() > 6 {
        return Err(Error::Build(format!("{} stages is too deep", cfg.widths.len())));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Build(format!("dropout {} not in [0, 1)", cfg.dropout)));
    }
    Ok(())
}

/// VGG-style stages `[conv3×3 → bn → relu] × 2 → maxpool → dropout2d`.
/// Returns the layer index of each stage's pool.
fn vgg_encoder<T: Real>(b: &mut Builder<T>, cfg: &ModelConfig) -> Result<Vec<usize>> {
    let mut cin = 3;
    let mut pools = Vec::new();
    for (s, &w) in cfg.widths.iter().enumerate() {
        let prefix = format!("enc{}", s + 1);
        b.conv_bn_relu(&prefix, 1, cin, w)?;
        b.conv_bn_relu(&prefix, 2, w, w)?;
        b.push(format!("{prefix}.pool"), LayerKind::MaxPool);
        pools.push(b.layers.len() - 1);
        b.push(format!("{prefix}.drop"), LayerKind::Dropout2d { p: cfg.dropout });
        cin = w;
    }
    Ok(pools)
}

/// VGG encoder, then a 1×1 convolution to `2·r²` channels, one
/// depth-to-space by `r`, and a 3×3 convolution producing the logits.
pub fn build_vgg_mini_d2s<T: Real>(cfg: &ModelConfig) -> Result<ModelGraph<T>> {
    check_cfg(cfg)?;
    let r = cfg.downsample_factor();
    let mut b = Builder::new(cfg.seed);
    vgg_encoder(&mut b, cfg)?;
    b.phase = Phase::Head;
    let last = *cfg.widths.last().expect("checked");
    b.conv("head.conv1x1".into(), last, 2 * r * r, 1, 1)?;
    b.push("head.d2s".into(), LayerKind::DepthToSpace { r });
    b.conv("head.conv".into(), 2, 2, 3, 1)?;
    b.finish(cfg)
}

/// Residual encoder with a depth-to-space head.
///
/// Stem `conv3×3 → bn → relu` with `widths[0] / 2` channels, then one stage
/// per width of two residual blocks. The first block of a stage downsamples
/// with stride 2 and a 1×1 stride-2 projection on the skip path. Dropout
/// follows every stage but the last. The final stage width must be `2·r²`
/// so that depth-to-space yields exactly two channels, which two 3×3
/// convolutions turn into logits.
pub fn build_resnet_mini_d2s<T: Real>(cfg: &ModelConfig) -> Result<ModelGraph<T>> {
    check_cfg(cfg)?;
    let r = cfg.downsample_factor();
    let last = *cfg.widths.last().expect("checked");
    if last != 2 * r * r {
        return Err(Error::Build(format!(
            "final width {last} must equal 2·r² = {} for depth-to-space to two channels",
            2 * r * r
        )));
    }
    let stem = (cfg.widths[0] / 2).max(1);
    let mut b = Builder::new(cfg.seed);
    b.conv("stem.conv".into(), 3, stem, 3, 1)?;
    b.push("stem.bn".into(), LayerKind::BatchNorm(BnParams::new(stem)));
    b.push("stem.relu".into(), LayerKind::Relu);
    let mut cin = stem;
    let stages = cfg.widths.len();
    for (s, &w) in cfg.widths.iter().enumerate() {
        for blk in 1..=2 {
            let prefix = format!("s{}.b{blk}", s + 1);
            let block_in = b.last();
            let stride = if blk == 1 { 2 } else { 1 };
            let c_in = if blk == 1 { cin } else { w };
            b.conv(format!("{prefix}.conv1"), c_in, w, 3, stride)?;
            b.push(format!("{prefix}.bn1"), LayerKind::BatchNorm(BnParams::new(w)));
            b.push(format!("{prefix}.relu1"), LayerKind::Relu);
            b.conv(format!("{prefix}.conv2"), w, w, 3, 1)?;
            let main = b.push(format!("{prefix}.bn2"), LayerKind::BatchNorm(BnParams::new(w)));
            let skip = if blk == 1 {
                b.conv_from(format!("{prefix}.proj"), block_in, c_in, w, 1, 2)?
            } else {
                block_in
            };
            let add = b.push_from(format!("{prefix}.add"), LayerKind::AddSkip, main);
            b.layers[add - 1].skip_source = Some(skip);
            b.push(format!("{prefix}.relu"), LayerKind::Relu);
        }
        if s + 1 < stages {
            b.push(format!("s{}.drop", s + 1), LayerKind::Dropout2d { p: cfg.dropout });
        }
        cin = w;
    }
    b.phase = Phase::Head;
    b.push("head.d2s".into(), LayerKind::DepthToSpace { r });
    b.conv("head.conv1".into(), 2, 2, 3, 1)?;
    b.conv("head.conv2".into(), 2, 2, 3, 1)?;
    b.finish(cfg)
}

/// SegNet-style encoder-decoder sharing the VGG encoder.
///
/// Each decoder stage unpools with the indices of its mirrored encoder
/// stage and applies two 3×3 convolutions, the second reducing to the
/// width of the stage below. In the outermost stage the second convolution
/// is the classifier: it maps straight to the two logit channels without
/// batch norm or ReLU.
pub fn build_segnet_mini<T: Real>(cfg: &ModelConfig) -> Result<ModelGraph<T>> {
    check_cfg(cfg)?;
    let mut b = Builder::new(cfg.seed);
    let pools = vgg_encoder(&mut b, cfg)?;
    b.phase = Phase::Decoder;
    for s in (0..cfg.widths.len()).rev() {
        let prefix = format!("dec{}", s + 1);
        let w = cfg.widths[s];
        b.push(format!("{prefix}.unpool"), LayerKind::MaxUnpool);
        let idx = b.layers.len() - 1;
        b.layers[idx].index_source = Some(pools[s]);
        b.conv_bn_relu(&prefix, 1, w, w)?;
        if s == 0 {
            b.conv(format!("{prefix}.conv2"), w, 2, 3, 1)?;
        } else {
            b.conv_bn_relu(&prefix, 2, w, cfg.widths[s - 1])?;
        }
    }
    b.finish(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use crate::Mode;

    fn input(h: usize) -> Tensor<f32> {
        Tensor::kaiming_init([1, 3, h, h], 1, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn all_models_keep_resolution() {
        for kind in ModelKind::ALL {
            let mut m = build::<f32>(&ModelConfig::new(kind)).unwrap();
            for h in [64, 32, 8] {
                let y = m.predict(&input(h)).unwrap();
                assert_eq!(y.shape(), Shape::new(1, 2, h, h), "{kind} at {h}");
            }
        }
    }

    #[test]
    fn vgg_head_channels() {
        let m = build_vgg_mini_d2s::<f32>(&ModelConfig::new(ModelKind::VggD2s)).unwrap();
        let shapes = m.infer_shapes(Shape::new(1, 3, 64, 64)).unwrap();
        let d2s = m.layer_index("head.d2s").unwrap();
        assert_eq!(shapes[d2s], Shape::new(1, 128, 8, 8));
        assert_eq!(shapes[d2s + 1], Shape::new(1, 2, 64, 64));
    }

    #[test]
    fn resnet_final_width_checked() {
        let cfg = ModelConfig::new(ModelKind::ResnetD2s).with_widths(vec![32, 64, 96]);
        assert!(matches!(build_resnet_mini_d2s::<f32>(&cfg), Err(Error::Build(_))));
        let m = build_resnet_mini_d2s::<f32>(&ModelConfig::new(ModelKind::ResnetD2s)).unwrap();
        let shapes = m.infer_shapes(Shape::new(1, 3, 64, 64)).unwrap();
        let d2s = m.layer_index("head.d2s").unwrap();
        assert_eq!(shapes[d2s], Shape::new(1, 128, 8, 8));
    }

    #[test]
    fn d2s_models_have_one_upsampling_node() {
        for kind in [ModelKind::VggD2s, ModelKind::ResnetD2s] {
            let m = build::<f32>(&ModelConfig::new(kind)).unwrap();
            let tags: Vec<_> = m.layers.iter().map(|l| l.kind.tag()).collect();
            assert_eq!(tags.iter().filter(|&&t| t == "d2s").count(), 1);
            assert!(!tags.contains(&"maxunpool"));
            let shapes = m.infer_shapes(Shape::new(1, 3, 64, 64)).unwrap();
            let growing = m
                .layers
                .iter()
                .enumerate()
                .filter(|(i, l)| shapes[i + 1].h() > shapes[l.input].h())
                .count();
            assert_eq!(growing, 1, "{kind}");
        }
    }

    #[test]
    fn segnet_shares_vgg_encoder_schema() {
        let mut v = build_vgg_mini_d2s::<f32>(&ModelConfig::new(ModelKind::VggD2s)).unwrap();
        let mut s = build_segnet_mini::<f32>(&ModelConfig::new(ModelKind::Segnet)).unwrap();
        let enc = |m: &mut ModelGraph<f32>| {
            m.param_manifest()
                .into_iter()
                .filter(|(n, _)| n.starts_with("enc"))
                .collect::<Vec<_>>()
        };
        let a = enc(&mut v);
        assert_eq!(a.len(), 3 * 2 * 4);
        assert_eq!(a, enc(&mut s));
    }

    #[test]
    fn vgg_param_count_by_formula() {
        let m = build_vgg_mini_d2s::<f32>(&ModelConfig::new(ModelKind::VggD2s)).unwrap();
        let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
        let bn = |c: usize| 2 * c;
        let expected = conv(3, 3, 16)
            + bn(16)
            + conv(3, 16, 16)
            + bn(16)
            + conv(3, 16, 32)
            + bn(32)
            + conv(3, 32, 32)
            + bn(32)
            + conv(3, 32, 64)
            + bn(64)
            + conv(3, 64, 64)
            + bn(64)
            + conv(1, 64, 128)
            + conv(3, 2, 2);
        assert_eq!(expected, 80_886);
        assert_eq!(m.param_count(), expected);
    }

    #[test]
    fn zero_weight_identity_block_passes_relu_of_skip() {
        let cfg = ModelConfig::new(ModelKind::ResnetD2s).with_dropout(0.0);
        let mut m = build_resnet_mini_d2s::<f64>(&cfg).unwrap();
        for name in ["s1.b2.conv1", "s1.b2.conv2"] {
            let i = m.layer_index(name).unwrap();
            if let LayerKind::Conv(p) = &mut m.layers[i].kind {
                p.weight.data_mut().fill(0.0);
            }
        }
        let x = Tensor::<f64>::kaiming_init([2, 3, 16, 16], 1, &mut Rng::new(4)).unwrap();
        m.forward(&x, Mode::Train, Some(&mut Rng::new(0))).unwrap();
        let block_in = m.layer_index("s1.b1.relu").unwrap() + 1;
        let block_out = m.layer_index("s1.b2.relu").unwrap() + 1;
        let nodes = m.recorded_activations().unwrap();
        assert_eq!(nodes[block_out], crate::nn::relu(&nodes[block_in]));
    }

    #[test]
    fn builds_are_deterministic() {
        let cfg = ModelConfig::new(ModelKind::Segnet).with_seed(9);
        let mut a = build::<f32>(&cfg).unwrap();
        let mut b = build::<f32>(&cfg).unwrap();
        assert_eq!(a.state(), b.state());
        let x = input(32);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn empty_widths_rejected() {
        let cfg = ModelConfig::new(ModelKind::VggD2s).with_widths(vec![]);
        assert!(matches!(build_vgg_mini_d2s::<f32>(&cfg), Err(Error::Build(_))));
    }
}
