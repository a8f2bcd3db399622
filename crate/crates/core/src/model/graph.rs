use crate::error::{shape_err, Error, Result};
use crate::nn::{self, BnCache, BnParams, ConvParams, DropoutMask, PoolIndices};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::{elementwise_add, Shape, Tensor};
use crate::Mode;

use super::ModelConfig;

/// Which part of the network a layer belongs to, for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Encoder,
    Decoder,
    Head,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Encoder => "encoder",
            Phase::Decoder => "decoder",
            Phase::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<T: Real = f32> {
    Conv(ConvParams<T>),
    BatchNorm(BnParams<T>),
    Relu,
    MaxPool,
    MaxUnpool,
    Dropout2d { p: f64 },
    DepthToSpace { r: usize },
    AddSkip,
}

impl<T: Real> LayerKind<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::BatchNorm(_) => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::MaxUnpool => "maxunpool",
            LayerKind::Dropout2d { .. } => "dropout2d",
            LayerKind::DepthToSpace { .. } => "d2s",
            LayerKind::AddSkip => "add_skip",
        }
    }
}

/// One node of the graph.
///
/// Node ids: 0 is the graph input and `i + 1` is the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Real = f32> {
    pub name: String,
    pub kind: LayerKind<T>,
    pub phase: Phase,
    /// Node id of the primary input.
    pub input: usize,
    /// Node id added to the primary input by `AddSkip`.
    pub skip_source: Option<usize>,
    /// Layer index of the `MaxPool` whose indices a `MaxUnpool` reuses.
    pub index_source: Option<usize>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn new(name: impl Into<String>, kind: LayerKind<T>, phase: Phase, input: usize) -> Self {
        let (a, b) = match &kind {
            LayerKind::Conv(p) => (p.weight.len(), p.bias.len()),
            LayerKind::BatchNorm(p) => (p.channels(), p.channels()),
            _ => (0, 0),
        };
        Self {
            name: name.into(),
            kind,
            phase,
            input,
            skip_source: None,
            index_source: None,
            grad_a: vec![T::zero(); a],
            grad_b: vec![T::zero(); b],
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.grad_a.len() + self.grad_b.len()
    }
}

/// A named parameter (or running-statistic buffer) of a model.
pub struct ParamSlot<'a, T: Real> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [T],
    /// Accumulated gradient; `None` for buffers that are not trained.
    pub grad: Option<&'a mut [T]>,
}

#[derive(Debug, Clone)]
enum Cache<T: Real> {
    None,
    Pool(PoolIndices),
    Bn(BnCache<T>),
    Dropout(DropoutMask<T>),
}

#[derive(Debug, Clone)]
struct Tape<T: Real> {
    nodes: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

/// Ordered layer list plus everything needed to run it forward and back.
#[derive(Debug, Clone)]
pub struct ModelGraph<T: Real = f32> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<T>>,
    tape: Option<Tape<T>>,
}

impl<T: Real> ModelGraph<T> {
    pub(crate) fn from_layers(config: ModelConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        let graph = Self {
            config,
            layers,
            tape: None,
        };
        graph.validate_links()?;
        Ok(graph)
    }

    pub fn name(&self) -> &'static str {
        self.config.kind.name()
    }

    pub fn downsample_factor(&self) -> usize {
        self.config.downsample_factor()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    fn validate_links(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.input > i {
                return Err(Error::Build(format!(
                    "{}: input node {} is not earlier",
                    l.name, l.input
                )));
            }
            match l.kind {
                LayerKind::AddSkip => match l.skip_source {
                    Some(s) if s <= i => {}
                    _ => return Err(Error::Build(format!("{}: missing skip source", l.name))),
                },
                LayerKind::MaxUnpool => match l.index_source {
                    Some(p) if p < i && matches!(self.layers[p].kind, LayerKind::MaxPool) => {}
                    _ => return Err(Error::Build(format!("{}: needs an earlier maxpool", l.name))),
                },
                _ => {}
            }
        }
        let unpools: Vec<_> = self.layers.iter().filter_map(|l| l.index_source).collect();
        let mut dedup = unpools.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != unpools.len() {
            return Err(Error::Build("a maxpool is shared by two unpools".into()));
        }
        Ok(())
    }

    /// Static shape inference: the output shape of every node.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        self.check_input(input)?;
        let mut shapes = vec![input];
        for l in &self.layers {
            let x = shapes[l.input];
            let y = match &l.kind {
                LayerKind::Conv(p) => p.output_shape(x)?,
                LayerKind::BatchNorm(p) => {
                    if x.c() != p.channels() {
                        return Err(shape_err!("{}: {} channels into bn({})", l.name, x.c(), p.channels()));
                    }
                    x
                }
                LayerKind::Relu | LayerKind::Dropout2d { .. } => x,
                LayerKind::MaxPool => {
                    if x.h() % 2 != 0 || x.w() % 2 != 0 {
                        return Err(shape_err!("{}: cannot pool {x}", l.name));
                    }
                    Shape::new(x.n(), x.c(), x.h() / 2, x.w() / 2)
                }
                LayerKind::MaxUnpool => {
                    let p = l.index_source.expect("validated");
                    let pooled_in = shapes[self.layers[p].input];
                    let pooled_out = shapes[p + 1];
                    if x != pooled_out {
                        return Err(shape_err!("{}: {x} does not match pooled {pooled_out}", l.name));
                    }
                    pooled_in
                }
                LayerKind::DepthToSpace { r } => {
                    if x.c() % (r * r) != 0 {
                        return Err(shape_err!("{}: {} channels not divisible by {r}²", l.name, x.c()));
                    }
                    Shape::new(x.n(), x.c() / (r * r), x.h() * r, x.w() * r)
                }
                LayerKind::AddSkip => {
                    let s = shapes[l.skip_source.expect("validated")];
                    if s != x {
                        return Err(shape_err!("{}: skip {s} vs {x}", l.name));
                    }
                    x
                }
            };
            shapes.push(y);
        }
        Ok(shapes)
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        let r = self.downsample_factor();
        if s.c() != 3 {
            return Err(shape_err!("model input must have 3 channels, got {s}"));
        }
        if s.n() == 0 || s.h() == 0 || s.w() == 0 || !s.h().is_multiple_of(r) || !s.w().is_multiple_of(r) {
            return Err(shape_err!("input {s}: spatial dims must be positive multiples of {r}"));
        }
        Ok(())
    }

    /// Runs the graph, recording activations for [`Self::backward`].
    ///
    /// Train mode uses batch statistics (and updates the running ones) and
    /// applies dropout with `rng`, which is then required.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        if mode == Mode::Train && rng.is_none() {
            return Err(Error::Domain("train-mode forward requires an rng".into()));
        }
        self.tape = None;
        let mut nodes: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        nodes.push(x.clone());
        for i in 0..self.layers.len() {
            let layer = &mut self.layers[i];
            let input = &nodes[layer.input];
            let (y, cache) = match &mut layer.kind {
                LayerKind::Conv(p) => (nn::conv2d_forward(input, p)?, Cache::None),
                LayerKind::BatchNorm(p) => {
                    let (y, c) = nn::batchnorm_forward(input, p, mode)?;
                    p.update_running(&c);
                    (y, Cache::Bn(c))
                }
                LayerKind::Relu => (nn::relu(input), Cache::None),
                LayerKind::MaxPool => {
                    let (y, idx) = nn::maxpool2d(input)?;
                    (y, Cache::Pool(idx))
                }
                LayerKind::MaxUnpool => {
                    let p = layer.index_source.expect("validated");
                    let Cache::Pool(idx) = &caches[p] else {
                        return Err(Error::State(format!("{}: pool cache missing", layer.name)));
                    };
                    (nn::maxunpool2d(input, idx, idx.input_shape)?, Cache::None)
                }
                LayerKind::Dropout2d { p } => {
                    let mut fallback = Rng::new(0);
                    let r = rng.as_deref_mut().unwrap_or(&mut fallback);
                    let (y, mask) = nn::dropout2d(input, *p, mode, r)?;
                    (y, Cache::Dropout(mask))
                }
                LayerKind::DepthToSpace { r } => (nn::depth_to_space(input, *r)?, Cache::None),
                LayerKind::AddSkip => {
                    let skip = &nodes[layer.skip_source.expect("validated")];
                    (elementwise_add(input, skip)?, Cache::None)
                }
            };
            nodes.push(y);
            caches.push(cache);
        }
        let out = nodes.last().expect("nonempty").clone();
        self.tape = Some(Tape { nodes, caches });
        Ok(out)
    }

    /// Eval-mode forward without keeping a tape.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(x, Mode::Eval, None)?;
        self.tape = None;
        Ok(out)
    }

    /// Back-propagates `grad_logits` through the recorded forward pass and
    /// adds the parameter gradients into the gradient accumulators. Consumes
    /// the tape.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let last = tape.nodes.last().expect("nonempty");
        last.same_shape(grad_logits, "backward upstream")?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; tape.nodes.len()];
        *grads.last_mut().expect("nonempty") = Some(grad_logits.clone());

        fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + *b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..self.layers.len()).rev() {
            let Some(up) = grads[i + 1].take() else {
                continue;
            };
            let layer = &mut self.layers[i];
            let x = &tape.nodes[layer.input];
            let gx = match (&layer.kind, &tape.caches[i]) {
                (LayerKind::Conv(p), _) => {
                    let g = nn::conv2d_backward(x, p, &up)?;
                    add_into(&mut layer.grad_a, g.weight.data());
                    add_into(&mut layer.grad_b, &g.bias);
                    g.x
                }
                (LayerKind::BatchNorm(p), Cache::Bn(c)) => {
                    let (gx, gg, gb) = nn::batchnorm_backward(x, p, c, &up)?;
                    add_into(&mut layer.grad_a, &gg);
                    add_into(&mut layer.grad_b, &gb);
                    gx
                }
                (LayerKind::Relu, _) => nn::relu_backward(x, &up)?,
                (LayerKind::MaxPool, Cache::Pool(idx)) => nn::maxpool2d_backward(&up, idx)?,
                (LayerKind::MaxUnpool, _) => {
                    let Cache::Pool(idx) = &tape.caches[layer.index_source.expect("validated")] else {
                        return Err(Error::State(format!("{}: pool cache missing", layer.name)));
                    };
                    nn::maxunpool2d_backward(&up, idx)?
                }
                (LayerKind::Dropout2d { .. }, Cache::Dropout(mask)) => nn::dropout2d_backward(&up, mask)?,
                (LayerKind::DepthToSpace { r }, _) => nn::space_to_depth(&up, *r)?,
                (LayerKind::AddSkip, _) => {
                    let skip = layer.skip_source.expect("validated");
                    accumulate(&mut grads[skip], up.clone());
                    up
                }
                (_, _) => return Err(Error::State(format!("{}: cache mismatch", layer.name))),
            };
            let input = layer.input;
            accumulate(&mut grads[input], gx);
        }
        Ok(())
    }

    /// Node outputs of the last forward pass, if its tape is still held.
    pub fn recorded_activations(&self) -> Option<&[Tensor<T>]> {
        self.tape.as_ref().map(|t| t.nodes.as_slice())
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.grad_a.fill(T::zero());
            l.grad_b.fill(T::zero());
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Every parameter and buffer in a fixed order: per layer, weight/bias
    /// or gamma/beta/running_mean/running_var.
    pub fn slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let name = &l.name;
            match &mut l.kind {
                LayerKind::Conv(p) => {
                    let dims = p.weight.shape().0.to_vec();
                    let cout = p.bias.len();
                    out.push(ParamSlot {
                        name: format!("{name}.weight"),
                        dims,
                        value: p.weight.data_mut(),
                        grad: Some(&mut l.grad_a),
                    });
                    out.push(ParamSlot {
                        name: format!("{name}.bias"),
                        dims: vec![cout],
                        value: &mut p.bias,
                        grad: Some(&mut l.grad_b),
                    });
                }
                LayerKind::BatchNorm(p) => {
                    let c = p.channels();
                    out.push(ParamSlot {
                        name: format!("{name}.gamma"),
                        dims: vec![c],
                        value: &mut p.gamma,
                        grad: Some(&mut l.grad_a),
                    });
                    out.push(ParamSlot {
                        name: format!("{name}.beta"),
                        dims: vec![c],
                        value: &mut p.beta,
                        grad: Some(&mut l.grad_b),
                    });
                    out.push(ParamSlot {
                        name: format!("{name}.running_mean"),
                        dims: vec![c],
                        value: &mut p.running_mean,
                        grad: None,
                    });
                    out.push(ParamSlot {
                        name: format!("{name}.running_var"),
                        dims: vec![c],
                        value: &mut p.running_var,
                        grad: None,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Trainable parameters only, as `(name, dims)`.
    pub fn param_manifest(&mut self) -> Vec<(String, Vec<usize>)> {
        self.slots()
            .into_iter()
            .filter(|s| s.grad.is_some())
            .map(|s| (s.name, s.dims))
            .collect()
    }

    /// Copy of every parameter and buffer, in [`Self::slots`] order.
    pub fn state(&mut self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        self.slots()
            .into_iter()
            .map(|s| (s.name, s.dims, s.value.to_vec()))
            .collect()
    }

    pub fn all_params_finite(&mut self) -> bool {
        self.slots().iter().all(|s| s.value.iter().all(|v| v.is_finite()))
    }

    /// Same graph with every value converted to `U`.
    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let kind = match &l.kind {
                    LayerKind::Conv(p) => LayerKind::Conv(ConvParams {
                        weight: p.weight.cast(),
                        bias: conv(&p.bias),
                        stride: p.stride,
                        pad: p.pad,
                    }),
                    LayerKind::BatchNorm(p) => LayerKind::BatchNorm(BnParams {
                        gamma: conv(&p.gamma),
                        beta: conv(&p.beta),
                        running_mean: conv(&p.running_mean),
                        running_var: conv(&p.running_var),
                        eps: p.eps,
                        momentum: p.momentum,
                    }),
                    LayerKind::Relu => LayerKind::Relu,
                    LayerKind::MaxPool => LayerKind::MaxPool,
                    LayerKind::MaxUnpool => LayerKind::MaxUnpool,
                    LayerKind::Dropout2d { p } => LayerKind::Dropout2d { p: *p },
                    LayerKind::DepthToSpace { r } => LayerKind::DepthToSpace { r: *r },
                    LayerKind::AddSkip => LayerKind::AddSkip,
                };
                let mut out = Layer::new(l.name.clone(), kind, l.phase, l.input);
                out.skip_source = l.skip_source;
                out.index_source = l.index_source;
                out
            })
            .collect();
        ModelGraph {
            config: self.config.clone(),
            layers,
            tape: None,
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}
