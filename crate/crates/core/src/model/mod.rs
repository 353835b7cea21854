//! The classifier `f(x; θ)` with a linear softmax head, its initialiser and
//! mini-batch SGD-with-momentum training.
//!
//! A network is a stack of relu dense layers, optionally preceded by one
//! valid-padding convolution (with 2×2 mean pooling when the output size is
//! even). The last dense layer's activations are the features; the
//! classifier is `logits = features · Wᵀ + b` with `W` of shape `[m, D]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{softmax_rows, Bindings, Graph, NodeId};
use crate::data::{ImageShape, LabeledDataset};
use crate::error::{GraphError, ModelError};
use crate::rng::{self, stream, Rng};
use crate::tensor::{Real, Tensor};


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Mlp,
    /// One `kernel × kernel` valid convolution with `filters` output
    /// channels in front of the dense stack.
    TinyConv { filters: usize, kernel: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input: ImageShape,
    /// Widths of the dense layers before the feature layer.
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeometry {
    out_h: usize,
    out_w: usize,
    kernel: usize,
    filters: usize,
    pooled: bool,
}

impl Architecture {
    pub fn mlp(input: ImageShape, hidden: &[usize], feature_dim: usize, num_classes: usize) -> Result<Self, ModelError> {
        let arch = Architecture {
            kind: ArchKind::Mlp,
            input,
            hidden_widths: hidden.to_vec(),
            feature_dim,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn tiny_conv(
        input: ImageShape,
        filters: usize,
        kernel: usize,
        hidden: &[usize],
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        let arch = Architecture {
            kind: ArchKind::TinyConv { filters, kernel },
            input,
            hidden_widths: hidden.to_vec(),
            feature_dim,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: alloc::string::String| Err(ModelError::Architecture(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.feature_dim < self.num_classes {
            return bad(format!(
                "feature dimension {} is below the class count {}",
                self.feature_dim, self.num_classes
            ));
        }
        if self.input.is_empty() {
            return bad("input shape has a zero extent".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden layer of width 0".into());
        }
        if let ArchKind::TinyConv { filters, kernel } = self.kind {
            if filters == 0 || kernel == 0 || kernel > self.input.height || kernel > self.input.width {
                return bad(format!(
                    "convolution {kernel}x{kernel}x{filters} does not fit input {:?}",
                    self.input.dims()
                ));
            }
        }
        Ok(())
    }

    /// Scalars per input sample.
    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    fn conv(&self) -> Option<ConvGeometry> {
        match self.kind {
            ArchKind::Mlp => None,
            ArchKind::TinyConv { filters, kernel } => {
                let out_h = self.input.height - kernel + 1;
                let out_w = self.input.width - kernel + 1;
                Some(ConvGeometry {
                    out_h,
                    out_w,
                    kernel,
                    filters,
                    pooled: out_h.is_multiple_of(2) && out_w.is_multiple_of(2),
                })
            }
        }
    }

    fn dense_widths(&self) -> Vec<usize> {
        let first = match self.conv() {
            None => self.input_len(),
            Some(c) if c.pooled => c.out_h / 2 * (c.out_w / 2) * c.filters,
            Some(c) => c.out_h * c.out_w * c.filters,
        };
        let mut widths = vec![first];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.feature_dim);
        widths
    }

    /// Shapes of all parameter tensors in declaration order: convolution
    /// weight and bias (if any), each dense weight `[in, out]` and bias,
    /// then the classifier `[m, D]` and its bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        if let Some(c) = self.conv() {
            shapes.push(vec![c.kernel * c.kernel * self.input.channels, c.filters]);
            shapes.push(vec![c.filters]);
        }
        let widths = self.dense_widths();
        for pair in widths.windows(2) {
            shapes.push(vec![pair[0], pair[1]]);
            shapes.push(vec![pair[1]]);
        }
        shapes.push(vec![self.num_classes, self.feature_dim]);
        shapes.push(vec![self.num_classes]);
        shapes
    }

    /// Fan-in of each parameter tensor; 0 for biases.
    pub fn fan_ins(&self) -> Vec<usize> {
        let shapes = self.param_shapes();
        let last = shapes.len() - 2;
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| match (s.len(), i == last) {
                (1, _) => 0,
                (_, true) => s[1],
                _ => s[0],
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Output nodes of [`build_forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub features: NodeId,
    pub logits: NodeId,
}

/// Constant 0/1 matrix mapping a flattened image to its flattened patches,
/// so that a convolution becomes two matmuls.
fn im2col_matrix<S: Real>(input: ImageShape, geo: ConvGeometry) -> Tensor<S> {
    let ImageShape {
        width: w, channels: c, ..
    } = input;
    let k = geo.kernel;
    let patch = k * k * c;
    let cols = geo.out_h * geo.out_w * patch;
    let mut data = vec![S::zero(); input.len() * cols];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let l = oy * geo.out_w + ox;
            for ky in 0..k {
                for kx in 0..k {
                    for ch in 0..c {
                        let q = (ky * k + kx) * c + ch;
                        let row = ((oy + ky) * w + ox + kx) * c + ch;
                        data[row * cols + l * patch + q] = S::one();
                    }
                }
            }
        }
    }
    Tensor::new(&[input.len(), cols], data).expect("im2col shape")
}

/// Appends the network to `g`. `params` are nodes holding the parameter
/// tensors in [`Architecture::param_shapes`] order and `x` is a
/// `[batch, input_len]` node.
pub fn build_forward<S: Real>(
    g: &mut Graph<S>,
    arch: &Architecture,
    params: &[NodeId],
    x: NodeId,
    batch: usize,
) -> Result<ForwardNodes, GraphError> {
    let mut p = params.iter().copied();
    let mut next = || p.next().expect("parameter count checked by caller");
    let mut h = x;
    if let Some(geo) = arch.conv() {
        let patch = geo.kernel * geo.kernel * arch.input.channels;
        let positions = geo.out_h * geo.out_w;
        let im2col = g.constant(im2col_matrix(arch.input, geo));
        let cols = g.matmul(h, im2col)?;
        let cols = g.reshape(cols, &[batch * positions, patch])?;
        let (w, b) = (next(), next());
        let conv = g.matmul(cols, w)?;
        let conv = g.add_row(conv, b)?;
        let conv = g.relu(conv)?;
        let mut maps = g.reshape(conv, &[batch, geo.out_h, geo.out_w, geo.filters])?;
        if geo.pooled {
            maps = g.mean_pool(maps, 2)?;
        }
        let flat = g.shape(maps)[1..].iter().product();
        h = g.reshape(maps, &[batch, flat])?;
    }
    for _ in 0..arch.hidden_widths.len() + 1 {
        let (w, b) = (next(), next());
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        h = g.relu(z)?;
    }
    let (wc, bc) = (next(), next());
    let logits = g.matmul_t(h, wc, false, true)?;
    let logits = g.add_row(logits, bc)?;
    Ok(ForwardNodes { features: h, logits })
}

/// Classifier parameters with their momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S = f32> {
    arch: Architecture,
    tensors: Vec<Tensor<S>>,
    momentum: Vec<Tensor<S>>,
}

impl<S: Real> ModelParams<S> {
    /// Wraps `tensors` (in declaration order) with zeroed momentum buffers.
    pub fn new(arch: Architecture, tensors: Vec<Tensor<S>>) -> Result<Self, ModelError> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if tensors.len() != shapes.len() || tensors.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice()) {
            return Err(ModelError::ParamMismatch);
        }
        let momentum = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(ModelParams { arch, tensors, momentum })
    }

    pub fn zeros(arch: Architecture) -> Result<Self, ModelError> {
        let tensors = arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self::new(arch, tensors)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn momentum(&self) -> &[Tensor<S>] {
        &self.momentum
    }

    /// Classifier matrix `[m, D]` (rows `w_j`) and bias.
    pub fn classifier(&self) -> (&Tensor<S>, &Tensor<S>) {
        let n = self.tensors.len();
        (&self.tensors[n - 2], &self.tensors[n - 1])
    }

    pub fn classifier_mut(&mut self) -> (&mut Tensor<S>, &mut Tensor<S>) {
        let n = self.tensors.len();
        let (head, tail) = self.tensors.split_at_mut(n - 1);
        (head.last_mut().expect("classifier weight"), &mut tail[0])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Copy in another precision. Momentum buffers are converted as well.
    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            arch: self.arch.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            momentum: self.momentum.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn reset_momentum(&mut self) {
        for m in &mut self.momentum {
            m.data_mut().fill(S::zero());
        }
    }
}

/// He initialisation: weights i.i.d. `N(0, 2 / fan_in)`, biases zero,
/// momentum zero. Values are drawn in 64-bit and rounded to `S`, so the
/// same seed gives the same network in either precision.
pub fn init_params<S: Real>(arch: &Architecture, seed: u64) -> Result<ModelParams<S>, ModelError> {
    let mut rng = rng::derive(seed, stream::INIT, 0);
    init_params_with(arch, &mut rng)
}

/// [`init_params`] drawing from a caller-supplied generator.
pub fn init_params_with<S: Real>(arch: &Architecture, rng: &mut Rng) -> Result<ModelParams<S>, ModelError> {
    arch.validate()?;
    let tensors = arch
        .param_shapes()
        .iter()
        .zip(arch.fan_ins())
        .map(|(shape, fan_in)| {
            if fan_in == 0 {
                return Tensor::zeros(shape);
            }
            let sd = libm::sqrt(2.0 / fan_in as f64);
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    S::lit(sd * z)
                })
                .collect();
            Tensor::new(shape, data).expect("init shape")
        })
        .collect();
    ModelParams::new(arch.clone(), tensors)
}

fn flatten_input<S: Real>(arch: &Architecture, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
    let expected = arch.input_len();
    let batch = if x.rank() == 0 { 1 } else { x.shape()[0] };
    if x.row_width() != expected || x.rank() == 0 {
        return Err(ModelError::InputShape {
            expected,
            actual: x.row_width(),
        });
    }
    Ok(x.clone().reshaped(&[batch, expected]).map_err(GraphError::from)?)
}

struct Compiled<S> {
    graph: Graph<S>,
    params: Vec<NodeId>,
    x: NodeId,
    labels: NodeId,
    out: ForwardNodes,
    loss: NodeId,
    grads: Vec<NodeId>,
}

/// Forward and backward graphs of one architecture, built on first use for
/// each batch size and reused afterwards.
pub struct Network<S = f32> {
    arch: Architecture,
    compiled: BTreeMap<usize, Compiled<S>>,
}

impl<S: Real> Network<S> {
    pub fn new(arch: &Architecture) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(Network {
            arch: arch.clone(),
            compiled: BTreeMap::new(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    fn compiled(&mut self, batch: usize) -> Result<&Compiled<S>, ModelError> {
        if !self.compiled.contains_key(&batch) {
            let mut g = Graph::new();
            let params: Vec<NodeId> = self
                .arch
                .param_shapes()
                .iter()
                .enumerate()
                .map(|(i, s)| g.var(&format!("param{i}"), s))
                .collect();
            let x = g.var("x", &[batch, self.arch.input_len()]);
            let labels = g.var("labels", &[batch]);
            let out = build_forward(&mut g, &self.arch, &params, x, batch)?;
            let loss = g.softmax_cross_entropy(out.logits, labels)?;
            let grads = g.gradient(loss, &params)?;
            self.compiled.insert(
                batch,
                Compiled {
                    graph: g,
                    params,
                    x,
                    labels,
                    out,
                    loss,
                    grads,
                },
            );
        }
        Ok(&self.compiled[&batch])
    }

    fn check(&self, params: &ModelParams<S>) -> Result<(), ModelError> {
        if params.arch != self.arch {
            return Err(ModelError::ParamMismatch);
        }
        Ok(())
    }

    fn run(&mut self, params: &ModelParams<S>, x: &Tensor<S>, pick: impl Fn(&Compiled<S>) -> NodeId) -> Result<Tensor<S>, ModelError> {
        self.check(params)?;
        let x = flatten_input(&self.arch, x)?;
        let c = self.compiled(x.shape()[0])?;
        let mut b = Bindings::new().with(c.x, &x);
        for (&node, t) in c.params.iter().zip(&params.tensors) {
            b.bind(node, t);
        }
        Ok(c.graph.eval_one(&b, pick(c))?)
    }

    /// Penultimate-layer activations, `[batch, D]`.
    pub fn features(&mut self, params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        self.run(params, x, |c| c.out.features)
    }

    pub fn logits(&mut self, params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        self.run(params, x, |c| c.out.logits)
    }

    /// Mean cross-entropy of the batch and its gradient for every parameter.
    pub fn loss_and_grads(
        &mut self,
        params: &ModelParams<S>,
        x: &Tensor<S>,
        labels: &Tensor<S>,
    ) -> Result<(S, Vec<Tensor<S>>), ModelError> {
        self.check(params)?;
        let x = flatten_input(&self.arch, x)?;
        let batch = x.shape()[0];
        if labels.shape() != [batch] {
            return Err(ModelError::Config(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        let c = self.compiled(batch)?;
        let mut b = Bindings::new().with(c.x, &x).with(c.labels, labels);
        for (&node, t) in c.params.iter().zip(&params.tensors) {
            b.bind(node, t);
        }
        let mut outputs = vec![c.loss];
        outputs.extend_from_slice(&c.grads);
        let mut values = c.graph.eval(&b, &outputs)?;
        let grads = values.split_off(1);
        Ok((values[0].item(), grads))
    }

    pub fn loss(&mut self, params: &ModelParams<S>, x: &Tensor<S>, labels: &Tensor<S>) -> Result<S, ModelError> {
        self.check(params)?;
        let x = flatten_input(&self.arch, x)?;
        let c = self.compiled(x.shape()[0])?;
        let mut b = Bindings::new().with(c.x, &x).with(c.labels, labels);
        for (&node, t) in c.params.iter().zip(&params.tensors) {
            b.bind(node, t);
        }
        Ok(c.graph.eval_one(&b, c.loss)?.item())
    }
}

/// Penultimate-layer features `f(x; θ)` of a batch.
pub fn forward_features<S: Real>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
    Network::new(params.arch())?.features(params, x)
}

pub fn logits<S: Real>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
    Network::new(params.arch())?.logits(params, x)
}

/// Softmax of the classifier outputs, `[batch, m]`.
pub fn class_confidence<S: Real>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
    let z = logits(params, x)?;
    let m = params.arch().num_classes;
    Ok(Tensor::new(z.shape(), softmax_rows(z.data(), m)).expect("softmax shape"))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<S: Real>(scores: &Tensor<S>) -> Vec<usize> {
    let cols = scores.row_width();
    scores
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Predicted class of every sample, evaluated in chunks of `chunk` samples.
pub fn predict<S: Real>(params: &ModelParams<S>, data: &LabeledDataset, chunk: usize) -> Result<Vec<usize>, ModelError> {
    if data.shape() != params.arch().input {
        return Err(ModelError::InputShape {
            expected: params.arch().input_len(),
            actual: data.shape().len(),
        });
    }
    let mut net = Network::new(params.arch())?;
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        out.extend(argmax_rows(&net.logits(params, &data.batch(part))?));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning-rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 25,
            batch_size: 32,
            lr_decay: 0.1,
            lr_decay_every: 10,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) || self.lr_decay_every == 0 {
            return bad("learning-rate decay must be positive with a positive period");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Learning rate used during (zero-based) epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        (0..epoch / self.lr_decay_every).fold(self.learning_rate, |lr, _| lr * self.lr_decay)
    }
}

/// `buffer ← momentum · buffer + grad; param ← param − lr · buffer`.
pub fn sgd_momentum_step<S: Real>(
    params: &mut ModelParams<S>,
    grads: &[Tensor<S>],
    lr: f64,
    momentum: f64,
) -> Result<(), ModelError> {
    if grads.len() != params.tensors.len() || grads.iter().zip(&params.tensors).any(|(g, p)| g.shape() != p.shape()) {
        return Err(ModelError::ParamMismatch);
    }
    let (lr, mu) = (S::lit(lr), S::lit(momentum));
    for ((p, buf), g) in params.tensors.iter_mut().zip(&mut params.momentum).zip(grads) {
        for ((pv, bv), &gv) in p.data_mut().iter_mut().zip(buf.data_mut()).zip(g.data()) {
            *bv = mu * *bv + gv;
            *pv = *pv - lr * *bv;
        }
    }
    Ok(())
}

/// Reverses the columns of one `(H, W, C)` image stored row-major.
fn flip_columns<S: Copy>(image: &mut [S], width: usize, channels: usize) {
    for row in image.chunks_mut(width * channels) {
        for x in 0..width / 2 {
            for c in 0..channels {
                row.swap(x * channels + c, (width - 1 - x) * channels + c);
            }
        }
    }
}

/// Horizontal flip of an `[H, W, C]` (or `[H, W]`) image with probability
/// `prob`.
pub fn augment_flip<S: Real>(x: &Tensor<S>, prob: f64, rng: &mut Rng) -> Tensor<S> {
    let mut out = x.clone();
    if rng.random::<f64>() < prob {
        let s = x.shape();
        let (width, channels) = match s.len() {
            0 | 1 => (x.len(), 1),
            2 => (s[1], 1),
            _ => (s[1], s[2..].iter().product()),
        };
        flip_columns(out.data_mut(), width, channels);
    }
    out
}

fn check_dataset(arch: &Architecture, data: &LabeledDataset) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.shape() != arch.input {
        return Err(ModelError::InputShape {
            expected: arch.input_len(),
            actual: data.shape().len(),
        });
    }
    if let Some(&label) = data.labels().iter().find(|&&l| l >= arch.num_classes) {
        return Err(ModelError::LabelOutOfRange {
            label,
            classes: arch.num_classes,
        });
    }
    Ok(())
}

/// Epoch-by-epoch trainer. Epoch `e` visits the data in a permutation drawn
/// from `(cfg.seed, e)` and flips each sample with `cfg.flip_prob`.
pub struct Trainer<'d, S = f32> {
    net: Network<S>,
    params: ModelParams<S>,
    data: &'d LabeledDataset,
    cfg: TrainConfig,
    epoch: usize,
}

impl<'d, S: Real> Trainer<'d, S> {
    pub fn new(params: ModelParams<S>, data: &'d LabeledDataset, cfg: &TrainConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        check_dataset(params.arch(), data)?;
        Ok(Trainer {
            net: Network::new(params.arch())?,
            params,
            data,
            cfg: cfg.clone(),
            epoch: 0,
        })
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<S> {
        self.params
    }

    /// Runs one epoch and returns its mean per-sample training loss.
    pub fn run_epoch(&mut self) -> Result<f64, ModelError> {
        let n = self.data.len();
        let mut rng = rng::derive(self.cfg.seed, stream::SHUFFLE, self.epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let flips: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < self.cfg.flip_prob).collect();
        let lr = self.cfg.lr_at(self.epoch);
        let [_, w, c] = self.data.shape().dims();
        let stride = self.data.shape().len();

        let mut total = 0.0;
        for (chunk, flip) in order.chunks(self.cfg.batch_size).zip(flips.chunks(self.cfg.batch_size)) {
            let mut x = self.data.batch::<S>(chunk);
            for (image, &f) in x.data_mut().chunks_mut(stride).zip(flip) {
                if f {
                    flip_columns(image, w, c);
                }
            }
            let y = self.data.label_tensor::<S>(chunk);
            let (loss, grads) = self.net.loss_and_grads(&self.params, &x, &y)?;
            total += loss.as_f64() * chunk.len() as f64;
            sgd_momentum_step(&mut self.params, &grads, lr, self.cfg.momentum)?;
        }
        self.epoch += 1;
        Ok(total / n as f64)
    }
}

/// Trains for `cfg.epochs` epochs and returns the final parameters with the
/// per-epoch mean training loss.
pub fn train_classifier<S: Real>(
    params: ModelParams<S>,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams<S>, Vec<f64>), ModelError> {
    train_classifier_with(params, data, cfg, |_, _, _| {})
}

/// [`train_classifier`] with a callback `(epoch, params, loss)` after each
/// epoch.
pub fn train_classifier_with<S: Real>(
    params: ModelParams<S>,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams<S>, f64),
) -> Result<(ModelParams<S>, Vec<f64>), ModelError> {
    let mut trainer = Trainer::new(params, data, cfg)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let loss = trainer.run_epoch()?;
        trace.push(loss);
        on_epoch(e, trainer.params(), loss);
    }
    Ok((trainer.into_params(), trace))
}
