//! Dataset distillation: learn `n` synthetic images and a step size `η`
//! such that one gradient step on them, from a random initialisation,
//! fits real data.
//!
//! Each outer iteration draws `J` initialisations `θ₀`, takes the inner
//! step `θ₁ = θ₀ − η ∇θ l(x̃, θ₀)` symbolically, evaluates the loss of `θ₁`
//! on a real batch and differentiates that loss back through the inner step
//! to `x̃` and `η`. `η` is stored as `log η`, so it stays positive.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{finite_diff, max_relative_error, Bindings, Graph, NodeId};
use crate::data::{ImageShape, LabeledDataset};
use crate::error::{DistillError, GraphError, ModelError};
use crate::model::{self, build_forward, Architecture, ModelParams};
use crate::rng::{self, stream, Rng};
use crate::tensor::{Real, Tensor};


/// A model family the distillation loop can differentiate through.
pub trait Learner<S: Real> {
    fn param_shapes(&self) -> Vec<Vec<usize>>;
    fn input_len(&self) -> usize;
    /// Appends the mean loss of a `[batch, input_len]` input with the given
    /// labels under `params`.
    fn batch_loss(
        &self,
        g: &mut Graph<S>,
        params: &[NodeId],
        x: NodeId,
        labels: NodeId,
        batch: usize,
    ) -> Result<NodeId, GraphError>;
    /// One draw from the initial-weight distribution.
    fn sample_params(&self, rng: &mut Rng) -> Vec<Tensor<S>>;
}

impl<S: Real> Learner<S> for Architecture {
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        Architecture::param_shapes(self)
    }

    fn input_len(&self) -> usize {
        Architecture::input_len(self)
    }

    fn batch_loss(
        &self,
        g: &mut Graph<S>,
        params: &[NodeId],
        x: NodeId,
        labels: NodeId,
        batch: usize,
    ) -> Result<NodeId, GraphError> {
        let out = build_forward(g, self, params, x, batch)?;
        g.softmax_cross_entropy(out.logits, labels)
    }

    fn sample_params(&self, rng: &mut Rng) -> Vec<Tensor<S>> {
        model::init_params_with::<S>(self, rng)
            .expect("architecture validated")
            .tensors()
            .to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    /// Number of distilled images.
    pub n: usize,
    pub eta0: f64,
    /// Outer step size.
    pub alpha: f64,
    /// Real-batch size per outer iteration (clamped to the dataset size).
    pub batch_size: usize,
    pub iterations: usize,
    /// Initial-weight draws per outer iteration.
    pub weight_draws: usize,
    pub inner_steps: usize,
    /// Snapshot every this many iterations and after the last one.
    pub snapshot_every: Option<usize>,
    pub seed: u64,
}

impl DistillConfig {
    pub fn for_classes(m: usize) -> Self {
        DistillConfig {
            n: m,
            eta0: 0.01,
            alpha: 0.1,
            batch_size: 100,
            iterations: 2000,
            weight_draws: 4,
            inner_steps: 1,
            snapshot_every: None,
            seed: 0,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), DistillError> {
        let bad = |msg: alloc::string::String| Err(DistillError::Config(msg));
        if self.n < num_classes {
            return bad(format!("{} distilled images cannot cover {num_classes} classes", self.n));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be positive, got {}", self.eta0));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.weight_draws == 0 || self.inner_steps == 0 {
            return bad("batch size, weight draws and inner steps must be positive".into());
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot interval must be positive".into());
        }
        Ok(())
    }
}

/// Synthetic images with fixed labels and the learned inner step size.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledSet<S = f32> {
    /// `[n, H, W, C]`.
    pub images: Tensor<S>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub log_eta: f64,
    /// Hash of the configuration that produced the set; filled in by the
    /// caller.
    pub config_hash: [u8; 32],
    /// Completed outer iterations.
    pub iteration: u64,
}

impl<S: Real> DistilledSet<S> {
    pub fn eta(&self) -> f64 {
        libm::exp(self.log_eta)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        let s = self.images.shape();
        ImageShape::new(s[1], s[2], s[3])
    }

    /// The images as a labeled dataset, for training alongside real data.
    pub fn to_dataset(&self) -> LabeledDataset {
        let pixels = self.images.data().iter().map(|v| v.as_f64() as f32).collect();
        LabeledDataset::new("distilled", self.shape(), self.num_classes, pixels, self.labels.clone())
            .expect("distilled labels are in range")
    }

    /// Images as `[n, H·W·C]`.
    pub fn flat_images(&self) -> Tensor<S> {
        let n = self.len();
        self.images.clone().reshaped(&[n, self.images.len() / n.max(1)]).expect("flat view")
    }

    pub fn label_tensor(&self) -> Tensor<S> {
        Tensor::vector(self.labels.iter().map(|&l| S::from_usize(l)).collect())
    }
}

/// Noise initialisation: pixels `0.5 + 0.25 z` with `z ~ N(0, 1)`, labels
/// round-robin over the classes, `log η = ln eta0`.
pub fn init_distilled<S: Real>(cfg: &DistillConfig, arch: &Architecture) -> Result<DistilledSet<S>, DistillError> {
    cfg.validate(arch.num_classes)?;
    let [h, w, c] = arch.input.dims();
    let mut rng = rng::derive(cfg.seed, stream::DISTILL_INIT, 0);
    let data = (0..cfg.n * arch.input_len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            S::lit(0.5 + 0.25 * z)
        })
        .collect();
    Ok(DistilledSet {
        images: Tensor::new(&[cfg.n, h, w, c], data).expect("distilled shape"),
        labels: (0..cfg.n).map(|i| i % arch.num_classes).collect(),
        num_classes: arch.num_classes,
        log_eta: libm::log(cfg.eta0),
        config_hash: [0; 32],
        iteration: 0,
    })
}

/// The unrolled bilevel graph: inner steps on `x̃`, outer loss on a real
/// batch, and the meta-gradients with respect to `x̃` and `η`.
pub struct MetaGraph<S> {
    graph: Graph<S>,
    x_tilde: NodeId,
    eta: NodeId,
    theta0: Vec<NodeId>,
    x_real: NodeId,
    y_real: NodeId,
    theta1: Vec<NodeId>,
    outer: NodeId,
    grad_x: NodeId,
    grad_eta: NodeId,
}

/// Values from one evaluation of a [`MetaGraph`].
#[derive(Clone, Debug)]
pub struct MetaValues<S> {
    pub loss: S,
    pub grad_x: Tensor<S>,
    pub grad_eta: S,
}

impl<S: Real> MetaGraph<S> {
    pub fn build<L: Learner<S>>(
        learner: &L,
        labels: &[usize],
        real_batch: usize,
        inner_steps: usize,
    ) -> Result<Self, GraphError> {
        let n = labels.len();
        let d = learner.input_len();
        let mut g = Graph::new();
        let x_tilde = g.var("x_tilde", &[n, d]);
        let eta = g.var("eta", &[]);
        let theta0: Vec<NodeId> = learner
            .param_shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| g.var(&format!("theta0_{i}"), s))
            .collect();
        let x_real = g.var("x_real", &[real_batch, d]);
        let y_real = g.var("y_real", &[real_batch]);
        let y_tilde = g.constant(Tensor::vector(labels.iter().map(|&l| S::from_usize(l)).collect()));

        let mut theta = theta0.clone();
        for _ in 0..inner_steps {
            let inner = learner.batch_loss(&mut g, &theta, x_tilde, y_tilde, n)?;
            let grads = g.gradient(inner, &theta)?;
            let mut next = Vec::with_capacity(theta.len());
            for (&p, &gp) in theta.iter().zip(&grads) {
                let step = g.scale_by(eta, gp)?;
                next.push(g.sub(p, step)?);
            }
            theta = next;
        }
        let outer = learner.batch_loss(&mut g, &theta, x_real, y_real, real_batch)?;
        let meta = g.gradient(outer, &[x_tilde, eta])?;
        Ok(MetaGraph {
            graph: g,
            x_tilde,
            eta,
            theta0,
            x_real,
            y_real,
            theta1: theta,
            outer,
            grad_x: meta[0],
            grad_eta: meta[1],
        })
    }

    fn bindings<'a>(
        &self,
        x_tilde: &'a Tensor<S>,
        eta: &'a Tensor<S>,
        theta0: &'a [Tensor<S>],
        x_real: &'a Tensor<S>,
        y_real: &'a Tensor<S>,
    ) -> Bindings<'a, S> {
        let mut b = Bindings::new()
            .with(self.x_tilde, x_tilde)
            .with(self.eta, eta)
            .with(self.x_real, x_real)
            .with(self.y_real, y_real);
        for (&node, t) in self.theta0.iter().zip(theta0) {
            b.bind(node, t);
        }
        b
    }

    /// Outer loss and meta-gradients. `x_tilde` and `x_real` are flat
    /// `[rows, input_len]` tensors.
    pub fn evaluate(
        &self,
        x_tilde: &Tensor<S>,
        eta: S,
        theta0: &[Tensor<S>],
        x_real: &Tensor<S>,
        y_real: &Tensor<S>,
    ) -> Result<MetaValues<S>, GraphError> {
        let eta = Tensor::scalar(eta);
        let b = self.bindings(x_tilde, &eta, theta0, x_real, y_real);
        let mut v = self.graph.eval(&b, &[self.outer, self.grad_x, self.grad_eta])?;
        let grad_eta = v.pop().expect("three outputs").item();
        let grad_x = v.pop().expect("three outputs");
        Ok(MetaValues {
            loss: v[0].item(),
            grad_x,
            grad_eta,
        })
    }

    /// Outer loss only.
    pub fn loss(
        &self,
        x_tilde: &Tensor<S>,
        eta: S,
        theta0: &[Tensor<S>],
        x_real: &Tensor<S>,
        y_real: &Tensor<S>,
    ) -> Result<S, GraphError> {
        let eta = Tensor::scalar(eta);
        let b = self.bindings(x_tilde, &eta, theta0, x_real, y_real);
        Ok(self.graph.eval_one(&b, self.outer)?.item())
    }

    /// Parameters after the inner steps. The real-batch variables are not
    /// needed and may be bound to anything of the right shape.
    pub fn theta1(&self, x_tilde: &Tensor<S>, eta: S, theta0: &[Tensor<S>]) -> Result<Vec<Tensor<S>>, GraphError> {
        let eta = Tensor::scalar(eta);
        let mut b = Bindings::new().with(self.x_tilde, x_tilde).with(self.eta, &eta);
        for (&node, t) in self.theta0.iter().zip(theta0) {
            b.bind(node, t);
        }
        self.graph.eval(&b, &self.theta1)
    }
}

/// `inner_steps` plain gradient steps of size `η` on the distilled set,
/// starting from `theta0`.
pub fn inner_steps<S: Real>(
    theta0: &ModelParams<S>,
    distilled: &DistilledSet<S>,
    steps: usize,
) -> Result<ModelParams<S>, DistillError> {
    let arch = theta0.arch();
    let mg = MetaGraph::build(arch, &distilled.labels, 1, steps)?;
    let tensors = mg.theta1(&distilled.flat_images(), S::lit(distilled.eta()), theta0.tensors())?;
    Ok(ModelParams::new(arch.clone(), tensors)?)
}

/// One inner step, `θ₁ = θ₀ − η ∇θ l(x̃, θ₀)`.
pub fn inner_step<S: Real>(theta0: &ModelParams<S>, distilled: &DistilledSet<S>) -> Result<ModelParams<S>, DistillError> {
    inner_steps(theta0, distilled, 1)
}

/// Cross-entropy of a real batch under `theta1`.
pub fn outer_loss<S: Real>(theta1: &ModelParams<S>, x: &Tensor<S>, labels: &Tensor<S>) -> Result<S, DistillError> {
    if labels.is_empty() {
        return Err(DistillError::Config("empty real batch".into()));
    }
    Ok(model::Network::new(theta1.arch())?.loss(theta1, x, labels)?)
}

/// Sample order for real batches: an endless stream of per-epoch seeded
/// permutations, so the batch of any iteration is a function of its index.
struct BatchStream {
    seed: u64,
    n: usize,
    size: usize,
    perms: BTreeMap<u64, Vec<usize>>,
}

impl BatchStream {
    fn new(seed: u64, n: usize, size: usize) -> Self {
        BatchStream {
            seed,
            n,
            size: size.min(n),
            perms: BTreeMap::new(),
        }
    }

    fn perm(&mut self, epoch: u64) -> &[usize] {
        let (seed, n) = (self.seed, self.n);
        self.perms.entry(epoch).or_insert_with(|| {
            let mut rng = rng::derive(seed, stream::DISTILL_BATCH, epoch);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
    }

    fn batch(&mut self, iteration: u64) -> Vec<usize> {
        let start = iteration * self.size as u64;
        let out: Vec<usize> = (start..start + self.size as u64)
            .map(|q| {
                let (epoch, pos) = (q / self.n as u64, (q % self.n as u64) as usize);
                self.perm(epoch)[pos]
            })
            .collect();
        let oldest_needed = start / self.n as u64;
        self.perms.retain(|&e, _| e >= oldest_needed);
        out
    }
}

/// Result of [`distill`].
#[derive(Clone, Debug)]
pub struct DistillOutcome<S = f32> {
    pub distilled: DistilledSet<S>,
    /// Mean outer loss of each iteration run.
    pub trace: Vec<f64>,
    pub snapshots: Vec<DistilledSet<S>>,
}

fn map_graph(e: GraphError, iteration: u64) -> DistillError {
    match e {
        GraphError::NonFinite { .. } => DistillError::NonFiniteMetaGradient { iteration },
        e => DistillError::Graph(e),
    }
}

struct Driver<'a, S: Real, L> {
    learner: &'a L,
    data: &'a LabeledDataset,
    cfg: &'a DistillConfig,
    graph: MetaGraph<S>,
    batches: BatchStream,
}

impl<'a, S: Real, L: Learner<S>> Driver<'a, S, L> {
    /// Summed loss and meta-gradients over the `J` draws of iteration `t`.
    fn iterate(&mut self, set: &DistilledSet<S>, t: u64) -> Result<(f64, Tensor<S>, f64), DistillError> {
        let idx = self.batches.batch(t);
        let xr = self
            .data
            .batch::<S>(&idx)
            .reshaped(&[idx.len(), self.learner.input_len()])
            .expect("flat batch");
        let yr = self.data.label_tensor::<S>(&idx);
        let xt = set.flat_images();
        let eta = S::lit(set.eta());
        let mut rng = rng::derive(self.cfg.seed, stream::DISTILL_WEIGHTS, t);
        let mut loss = 0.0;
        let mut gx = Tensor::<S>::zeros(xt.shape());
        let mut geta = 0.0;
        for _ in 0..self.cfg.weight_draws {
            let theta0 = self.learner.sample_params(&mut rng);
            let v = self.graph.evaluate(&xt, eta, &theta0, &xr, &yr).map_err(|e| map_graph(e, t))?;
            loss += v.loss.as_f64();
            for (a, &b) in gx.data_mut().iter_mut().zip(v.grad_x.data()) {
                *a = *a + b;
            }
            geta += v.grad_eta.as_f64();
        }
        if !gx.is_finite() || !geta.is_finite() {
            return Err(DistillError::NonFiniteMetaGradient { iteration: t });
        }
        Ok((loss, gx, geta))
    }
}

/// The outer loop for any [`Learner`]. `init` is the iteration-0 state;
/// `resume`, if given, is a later state of the same run.
pub fn distill_learner<S: Real, L: Learner<S>>(
    learner: &L,
    data: &LabeledDataset,
    cfg: &DistillConfig,
    init: DistilledSet<S>,
    resume: Option<DistilledSet<S>>,
    mut on_snapshot: impl FnMut(&DistilledSet<S>),
) -> Result<DistillOutcome<S>, DistillError> {
    cfg.validate(init.num_classes)?;
    if data.shape().len() != learner.input_len() || init.images.row_width() != learner.input_len() {
        return Err(ModelError::InputShape {
            expected: learner.input_len(),
            actual: data.shape().len(),
        }
        .into());
    }
    if data.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let counts = data.class_counts();
    for &l in &init.labels {
        if counts.get(l).copied().unwrap_or(0) == 0 {
            return Err(DistillError::MissingClass(l));
        }
    }
    let mut set = match resume {
        Some(s) => {
            if s.labels != init.labels || s.images.shape() != init.images.shape() {
                return Err(DistillError::Config("resume set does not match the configuration".into()));
            }
            s
        }
        None => init.clone(),
    };

    let batch = cfg.batch_size.min(data.len());
    let mut driver = Driver {
        learner,
        data,
        cfg,
        graph: MetaGraph::build(learner, &init.labels, batch, cfg.inner_steps)?,
        batches: BatchStream::new(cfg.seed, data.len(), batch),
    };
    let j = cfg.weight_draws as f64;
    // The divergence guard compares against the first iteration's loss,
    // which a resumed run recomputes from the deterministic initial state.
    let mut initial = if set.iteration > 0 && (set.iteration as usize) < cfg.iterations {
        Some(driver.iterate(&init, 0)?.0 / j)
    } else {
        None
    };

    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let alpha = cfg.alpha;
    while (set.iteration as usize) < cfg.iterations {
        let t = set.iteration;
        let (loss, gx, geta) = driver.iterate(&set, t)?;
        let mean = loss / j;
        let reference = *initial.get_or_insert(mean);
        if mean > 10.0 * reference {
            return Err(DistillError::Diverged {
                iteration: t,
                loss: mean,
                initial: reference,
            });
        }
        let a = S::lit(alpha);
        for (x, &g) in set.images.data_mut().iter_mut().zip(gx.data()) {
            *x = *x - a * g;
        }
        set.log_eta -= alpha * set.eta() * geta;
        set.iteration += 1;
        trace.push(mean);

        let done = set.iteration as usize;
        if let Some(k) = cfg.snapshot_every {
            if done.is_multiple_of(k) || done == cfg.iterations {
                on_snapshot(&set);
                snapshots.push(set.clone());
            }
        }
    }
    Ok(DistillOutcome {
        distilled: set,
        trace,
        snapshots,
    })
}

/// Runs outer iterations until `cfg.iterations` are complete.
///
/// `resume` continues from a previously returned set or snapshot (whose
/// `iteration` says where to pick up); `None` starts from
/// [`init_distilled`]. `on_snapshot` sees each snapshot as it is taken.
pub fn distill_with<S: Real>(
    data: &LabeledDataset,
    arch: &Architecture,
    cfg: &DistillConfig,
    resume: Option<DistilledSet<S>>,
    on_snapshot: impl FnMut(&DistilledSet<S>),
) -> Result<DistillOutcome<S>, DistillError> {
    arch.validate()?;
    if data.shape() != arch.input {
        return Err(ModelError::InputShape {
            expected: arch.input_len(),
            actual: data.shape().len(),
        }
        .into());
    }
    let init = init_distilled::<S>(cfg, arch)?;
    distill_learner(arch, data, cfg, init, resume, on_snapshot)
}

/// Distills `data` (typically the auxiliary samples) from scratch.
pub fn distill<S: Real>(
    data: &LabeledDataset,
    arch: &Architecture,
    cfg: &DistillConfig,
) -> Result<DistillOutcome<S>, DistillError> {
    distill_with(data, arch, cfg, None, |_| {})
}

/// Test accuracy after `steps` inner steps on `train` (with step size `eta`)
/// from each of `draws` fresh initialisations. Initialisation `i` is the
/// same for every call with the same `seed`.
pub fn one_step_accuracies<S: Real>(
    arch: &Architecture,
    train: &LabeledDataset,
    eta: f64,
    steps: usize,
    test: &LabeledDataset,
    seed: u64,
    draws: usize,
) -> Result<Vec<f64>, DistillError> {
    if test.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let set = DistilledSet::<S> {
        images: train.all_images(),
        labels: train.labels().to_vec(),
        num_classes: train.num_classes(),
        log_eta: libm::log(eta),
        config_hash: [0; 32],
        iteration: 0,
    };
    let mg = MetaGraph::build(arch, &set.labels, 1, steps)?;
    let flat = set.flat_images();
    (0..draws)
        .map(|i| {
            let mut rng = rng::derive(seed, stream::EVAL, i as u64);
            let theta0 = Learner::<S>::sample_params(arch, &mut rng);
            let theta1 = mg.theta1(&flat, S::lit(eta), &theta0)?;
            let params = ModelParams::new(arch.clone(), theta1)?;
            let pred = model::predict(&params, test, 512)?;
            let correct = pred.iter().zip(test.labels()).filter(|(a, b)| a == b).count();
            Ok(correct as f64 / test.len() as f64)
        })
        .collect()
}

/// Relative errors of the engine's meta-gradients against central
/// differences of the full inner-step/outer-loss pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaCheck {
    pub x_error: f64,
    pub eta_error: f64,
}

impl MetaCheck {
    pub fn max(&self) -> f64 {
        self.x_error.max(self.eta_error)
    }
}

/// Compares `∇x̃ L` and `∂L/∂η` from the unrolled graph with central
/// differences of step `eps`, all in 64-bit. `x_tilde` and `x_real` are flat
/// `[rows, input_len]`.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient_check<L: Learner<f64>>(
    learner: &L,
    x_tilde: &Tensor<f64>,
    labels: &[usize],
    eta: f64,
    theta0: &[Tensor<f64>],
    x_real: &Tensor<f64>,
    y_real: &Tensor<f64>,
    eps: f64,
) -> Result<MetaCheck, DistillError> {
    let mg = MetaGraph::build(learner, labels, x_real.shape()[0], 1)?;
    let v = mg.evaluate(x_tilde, eta, theta0, x_real, y_real)?;
    let mut failed = None;
    let mut probe = |x: &Tensor<f64>, e: f64| match mg.loss(x, e, theta0, x_real, y_real) {
        Ok(l) => l,
        Err(err) => {
            failed = Some(err);
            f64::NAN
        }
    };
    let fd_x = finite_diff(|x| probe(x, eta), x_tilde, eps);
    let fd_eta = finite_diff(|e| probe(x_tilde, e.item()), &Tensor::scalar(eta), eps);
    if let Some(err) = failed {
        return Err(err.into());
    }
    let nonfinite = |_| DistillError::NonFiniteMetaGradient { iteration: 0 };
    let fd_x = fd_x.map_err(nonfinite)?;
    let fd_eta = fd_eta.map_err(nonfinite)?;
    Ok(MetaCheck {
        x_error: max_relative_error(v.grad_x.data(), fd_x.data()),
        eta_error: max_relative_error(&[v.grad_eta], fd_eta.data()),
    })
}

/// Draws one initialisation for `arch` from the distillation weight stream
/// of iteration `t`, draw `j`. Exposed for replay checks.
pub fn weight_draw<S: Real>(arch: &Architecture, seed: u64, t: u64, j: usize) -> Vec<Tensor<S>> {
    let mut rng = rng::derive(seed, stream::DISTILL_WEIGHTS, t);
    let mut out = vec![];
    for _ in 0..=j {
        out = Learner::<S>::sample_params(arch, &mut rng);
    }
    out
}
