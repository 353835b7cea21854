//! Static computation graphs with symbolic reverse-mode differentiation.
//!
//! [`Graph::gradient`] appends the backward pass to the same graph as ordinary
//! nodes, so a gradient can itself be differentiated. Every op's adjoint is
//! written in terms of ops from the same closed set.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use crate::error::{GraphError, ShapeError};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<S> {
    Var(String),
    Const(Tensor<S>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Relu(NodeId),
    /// 1 where the input is strictly positive, else 0. Derivative is zero.
    Step(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: NodeId,
    },
    OneHot {
        labels: NodeId,
        classes: usize,
    },
    Sum(NodeId),
    Broadcast(NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId),
    RowSum(NodeId),
    BroadcastCols(NodeId),
    Reshape(NodeId),
    MeanPool {
        input: NodeId,
        window: usize,
    },
    Upsample {
        input: NodeId,
        window: usize,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Var(_) => "var",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::OneHot { .. } => "one_hot",
            Op::Sum(_) => "sum",
            Op::Broadcast(_) => "broadcast",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::RowSum(_) => "row_sum",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::Reshape(_) => "reshape",
            Op::MeanPool { .. } => "mean_pool",
            Op::Upsample { .. } => "upsample",
        }
    }

    fn inputs(&self) -> Inputs {
        use Op::*;
        match *self {
            Var(_) | Const(_) => Inputs::None,
            Add(a, b) | Sub(a, b) | Mul(a, b) => Inputs::Two(a, b),
            MatMul { a, b, .. } => Inputs::Two(a, b),
            SoftmaxCrossEntropy { logits, labels } => Inputs::Two(logits, labels),
            Scale(a, _)
            | Relu(a)
            | Step(a)
            | Tanh(a)
            | Softmax(a)
            | Sum(a)
            | Broadcast(a)
            | SumRows(a)
            | BroadcastRows(a)
            | RowSum(a)
            | BroadcastCols(a)
            | Reshape(a) => Inputs::One(a),
            OneHot { labels, .. } => Inputs::One(labels),
            MeanPool { input, .. } | Upsample { input, .. } => Inputs::One(input),
        }
    }
}

#[derive(Clone, Copy)]
enum Inputs {
    None,
    One(NodeId),
    Two(NodeId, NodeId),
}

impl Inputs {
    fn for_each(self, mut f: impl FnMut(NodeId)) {
        match self {
            Inputs::None => {}
            Inputs::One(a) => f(a),
            Inputs::Two(a, b) => {
                f(a);
                f(b);
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
}

/// An append-only DAG of tensor operations over scalar type `S`.
///
/// Node ids are handed out in insertion order, which is also a topological
/// order. Shapes are fixed when a node is created.
#[derive(Clone, Debug, Default)]
pub struct Graph<S = f32> {
    nodes: Vec<Node<S>>,
}

/// Values for the variables of a graph, borrowed for one evaluation.
#[derive(Debug)]
pub struct Bindings<'a, S> {
    values: BTreeMap<NodeId, &'a Tensor<S>>,
}

impl<'a, S> Default for Bindings<'a, S> {
    fn default() -> Self {
        Bindings {
            values: BTreeMap::new(),
        }
    }
}

impl<'a, S> Bindings<'a, S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, var: NodeId, value: &'a Tensor<S>) -> &mut Self {
        self.values.insert(var, value);
        self
    }

    pub fn with(mut self, var: NodeId, value: &'a Tensor<S>) -> Self {
        self.values.insert(var, value);
        self
    }
}

fn incompatible(op: &'static str, lhs: &[usize], rhs: &[usize]) -> GraphError {
    GraphError::Shape(ShapeError::Incompatible {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

fn rank_error(op: &'static str, expected: usize, shape: &[usize]) -> GraphError {
    GraphError::Shape(ShapeError::Rank {
        op,
        expected,
        shape: shape.to_vec(),
    })
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.index()].shape
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, shape });
        id
    }

    fn check(&self, id: NodeId) -> Result<&[usize], GraphError> {
        self.nodes
            .get(id.index())
            .map(|n| n.shape.as_slice())
            .ok_or(GraphError::UnknownNode(id.index()))
    }

    /// Declares a variable that must be bound at evaluation time.
    pub fn var(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(Op::Var(name.to_string()), shape.to_vec())
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn is_var(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.index()).map(|n| &n.op), Some(Op::Var(_)))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>, GraphError> {
        let sa = self.check(a)?;
        let sb = self.check(b)?;
        if sa != sb {
            return Err(incompatible(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let shape = self.check(a)?.to_vec();
        Ok(self.push(Op::Scale(a, factor), shape))
    }

    /// Multiplies tensor `t` by the scalar node `s`.
    pub fn scale_by(&mut self, s: NodeId, t: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.check(t)?.to_vec();
        let b = self.broadcast(s, &shape)?;
        self.mul(b, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        let sb = self.check(b)?;
        if sa.len() != 2 {
            return Err(rank_error("matmul", 2, sa));
        }
        if sb.len() != 2 {
            return Err(rank_error("matmul", 2, sb));
        }
        let (n, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, m) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(incompatible("matmul", sa, sb));
        }
        Ok(self.push(Op::MatMul { a, b, ta, tb }, vec![n, m]))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.check(a)?.to_vec();
        Ok(self.push(Op::Relu(a), shape))
    }

    pub fn step(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.check(a)?.to_vec();
        Ok(self.push(Op::Step(a), shape))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.check(a)?.to_vec();
        Ok(self.push(Op::Tanh(a), shape))
    }

    /// Row-wise softmax of a `[n, m]` tensor.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.check(a)?.to_vec();
        if shape.len() != 2 {
            return Err(rank_error("softmax", 2, &shape));
        }
        Ok(self.push(Op::Softmax(a), shape))
    }

    /// Mean cross-entropy of `[n, m]` logits against `n` integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId, GraphError> {
        let sl = self.check(logits)?;
        let sy = self.check(labels)?;
        if sl.len() != 2 {
            return Err(rank_error("softmax_cross_entropy", 2, sl));
        }
        if sy.len() != 1 || sy[0] != sl[0] {
            return Err(incompatible("softmax_cross_entropy", sl, sy));
        }
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, labels }, Vec::new()))
    }

    pub fn one_hot(&mut self, labels: NodeId, classes: usize) -> Result<NodeId, GraphError> {
        let sy = self.check(labels)?;
        if sy.len() != 1 {
            return Err(rank_error("one_hot", 1, sy));
        }
        let shape = vec![sy[0], classes];
        Ok(self.push(Op::OneHot { labels, classes }, shape))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(a)?;
        Ok(self.push(Op::Sum(a), Vec::new()))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let n = numel(self.check(a)?);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Expands a scalar node to `shape`.
    pub fn broadcast(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if numel(sa) != 1 {
            return Err(incompatible("broadcast", sa, shape));
        }
        Ok(self.push(Op::Broadcast(a), shape.to_vec()))
    }

    /// Sums `[n, m]` over rows to `[m]`.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 2 {
            return Err(rank_error("sum_rows", 2, sa));
        }
        let shape = vec![sa[1]];
        Ok(self.push(Op::SumRows(a), shape))
    }

    /// Repeats `[m]` into `rows` rows.
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 1 {
            return Err(rank_error("broadcast_rows", 1, sa));
        }
        let shape = vec![rows, sa[0]];
        Ok(self.push(Op::BroadcastRows(a), shape))
    }

    /// Sums `[n, m]` across each row to `[n]`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 2 {
            return Err(rank_error("row_sum", 2, sa));
        }
        let shape = vec![sa[0]];
        Ok(self.push(Op::RowSum(a), shape))
    }

    /// Repeats `[n]` into `cols` columns.
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 1 {
            return Err(rank_error("broadcast_cols", 1, sa));
        }
        let shape = vec![sa[0], cols];
        Ok(self.push(Op::BroadcastCols(a), shape))
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 2 {
            return Err(rank_error("add_row", 2, sa));
        }
        let rows = sa[0];
        let b = self.broadcast_rows(bias, rows)?;
        self.add(a, b)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if numel(sa) != numel(shape) {
            return Err(incompatible("reshape", sa, shape));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    /// Non-overlapping `window x window` average over `[n, h, w, c]`.
    pub fn mean_pool(&mut self, a: NodeId, window: usize) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 4 {
            return Err(rank_error("mean_pool", 4, sa));
        }
        if window == 0 || sa[1] % window != 0 || sa[2] % window != 0 {
            return Err(incompatible("mean_pool", sa, &[window, window]));
        }
        let shape = vec![sa[0], sa[1] / window, sa[2] / window, sa[3]];
        Ok(self.push(Op::MeanPool { input: a, window }, shape))
    }

    /// Nearest-neighbour repeat of `[n, h, w, c]`, the adjoint of sum pooling.
    pub fn upsample(&mut self, a: NodeId, window: usize) -> Result<NodeId, GraphError> {
        let sa = self.check(a)?;
        if sa.len() != 4 {
            return Err(rank_error("upsample", 4, sa));
        }
        let shape = vec![sa[0], sa[1] * window, sa[2] * window, sa[3]];
        Ok(self.push(Op::Upsample { input: a, window }, shape))
    }

    /// Appends nodes computing `d target / d v` for each `v` in `wrt`.
    ///
    /// The returned nodes are ordinary graph nodes, so calling `gradient`
    /// on (a reduction of) them yields second-order terms. A variable that
    /// `target` does not depend on gets a zero constant of its shape.
    pub fn gradient(&mut self, target: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>, GraphError> {
        let ts = self.check(target)?;
        if !ts.is_empty() {
            return Err(GraphError::NonScalarTarget(ts.to_vec()));
        }
        for &w in wrt {
            self.check(w)?;
        }

        let end = target.index() + 1;
        // Which nodes lie on a path from some `wrt` node.
        let mut depends = vec![false; end];
        for &w in wrt {
            if w.index() < end {
                depends[w.index()] = true;
            }
        }
        for i in 0..end {
            if depends[i] {
                continue;
            }
            let mut any = false;
            self.nodes[i].op.inputs().for_each(|x| any |= depends[x.index()]);
            depends[i] = any;
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; end];
        if depends[target.index()] {
            adjoint[target.index()] = Some(self.constant(Tensor::scalar(S::one())));
        }

        for i in (0..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes[i].op.clone();
            let me = NodeId(i as u32);
            let mut contributions: Vec<(NodeId, NodeId)> = Vec::new();
            self.backward_rule(&op, me, g, &depends, &mut contributions)?;
            for (input, c) in contributions {
                let slot = &mut adjoint[input.index()];
                *slot = Some(match *slot {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let g = if w.index() < end { adjoint[w.index()] } else { None };
            out.push(match g {
                Some(g) => g,
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            });
        }
        Ok(out)
    }

    fn backward_rule(
        &mut self,
        op: &Op<S>,
        me: NodeId,
        g: NodeId,
        depends: &[bool],
        out: &mut Vec<(NodeId, NodeId)>,
    ) -> Result<(), GraphError> {
        let wants = |n: NodeId| depends[n.index()];
        match *op {
            Op::Var(_) | Op::Const(_) | Op::Step(_) | Op::OneHot { .. } => {}
            Op::Add(a, b) => {
                if wants(a) {
                    out.push((a, g));
                }
                if wants(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    out.push((a, g));
                }
                if wants(b) {
                    let neg = self.scale(g, -1.0)?;
                    out.push((b, neg));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let c = self.mul(g, b)?;
                    out.push((a, c));
                }
                if wants(b) {
                    let c = self.mul(g, a)?;
                    out.push((b, c));
                }
            }
            Op::Scale(a, factor) => {
                if wants(a) {
                    let c = self.scale(g, factor)?;
                    out.push((a, c));
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                if wants(a) {
                    let c = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    out.push((a, c));
                }
                if wants(b) {
                    let c = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    out.push((b, c));
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    let mask = self.step(a)?;
                    let c = self.mul(g, mask)?;
                    out.push((a, c));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    // g * (1 - y^2) with y the tanh output
                    let yy = self.mul(me, me)?;
                    let gyy = self.mul(g, yy)?;
                    let c = self.sub(g, gyy)?;
                    out.push((a, c));
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    // s * (g - rowsum(s * g))
                    let cols = self.shape(me)[1];
                    let sg = self.mul(me, g)?;
                    let dot = self.row_sum(sg)?;
                    let dot = self.broadcast_cols(dot, cols)?;
                    let sdot = self.mul(me, dot)?;
                    let c = self.sub(sg, sdot)?;
                    out.push((a, c));
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                if wants(logits) {
                    let shape = self.shape(logits).to_vec();
                    let probs = self.softmax(logits)?;
                    let onehot = self.one_hot(labels, shape[1])?;
                    let diff = self.sub(probs, onehot)?;
                    let gn = self.scale(g, 1.0 / shape[0] as f64)?;
                    let c = self.scale_by(gn, diff)?;
                    out.push((logits, c));
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let shape = self.shape(a).to_vec();
                    let c = self.broadcast(g, &shape)?;
                    out.push((a, c));
                }
            }
            Op::Broadcast(a) => {
                if wants(a) {
                    let s = self.sum(g)?;
                    let shape = self.shape(a).to_vec();
                    let c = if shape.is_empty() { s } else { self.reshape(s, &shape)? };
                    out.push((a, c));
                }
            }
            Op::SumRows(a) => {
                if wants(a) {
                    let rows = self.shape(a)[0];
                    let c = self.broadcast_rows(g, rows)?;
                    out.push((a, c));
                }
            }
            Op::BroadcastRows(a) => {
                if wants(a) {
                    let c = self.sum_rows(g)?;
                    out.push((a, c));
                }
            }
            Op::RowSum(a) => {
                if wants(a) {
                    let cols = self.shape(a)[1];
                    let c = self.broadcast_cols(g, cols)?;
                    out.push((a, c));
                }
            }
            Op::BroadcastCols(a) => {
                if wants(a) {
                    let c = self.row_sum(g)?;
                    out.push((a, c));
                }
            }
            Op::Reshape(a) => {
                if wants(a) {
                    let shape = self.shape(a).to_vec();
                    let c = self.reshape(g, &shape)?;
                    out.push((a, c));
                }
            }
            Op::MeanPool { input, window } => {
                if wants(input) {
                    let up = self.upsample(g, window)?;
                    let c = self.scale(up, 1.0 / (window * window) as f64)?;
                    out.push((input, c));
                }
            }
            Op::Upsample { input, window } => {
                if wants(input) {
                    let pooled = self.mean_pool(g, window)?;
                    let c = self.scale(pooled, (window * window) as f64)?;
                    out.push((input, c));
                }
            }
        }
        Ok(())
    }

    /// Evaluates `outputs` under `bindings`.
    ///
    /// Only the ancestors of `outputs` are computed; intermediate buffers
    /// are released after their last consumer runs.
    pub fn eval(&self, bindings: &Bindings<'_, S>, outputs: &[NodeId]) -> Result<Vec<Tensor<S>>, GraphError> {
        let end = match outputs.iter().map(|o| o.index()).max() {
            Some(m) => m + 1,
            None => return Ok(Vec::new()),
        };
        if end > self.nodes.len() {
            return Err(GraphError::UnknownNode(end - 1));
        }

        let mut needed = vec![false; end];
        let mut keep = vec![false; end];
        for o in outputs {
            needed[o.index()] = true;
            keep[o.index()] = true;
        }
        let mut uses = vec![0u32; end];
        for i in (0..end).rev() {
            if needed[i] {
                self.nodes[i].op.inputs().for_each(|x| {
                    needed[x.index()] = true;
                    uses[x.index()] += 1;
                });
            }
        }

        let mut values: Vec<Option<Cow<'_, Tensor<S>>>> = vec![None; end];
        for i in 0..end {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let value: Cow<'_, Tensor<S>> = match &node.op {
                Op::Var(name) => {
                    let id = NodeId(i as u32);
                    let bound = bindings
                        .values
                        .get(&id)
                        .ok_or_else(|| GraphError::Unbound(name.clone()))?;
                    if bound.shape() != node.shape.as_slice() {
                        return Err(GraphError::BindingShape {
                            name: name.clone(),
                            declared: node.shape.clone(),
                            actual: bound.shape().to_vec(),
                        });
                    }
                    if !bound.is_finite() {
                        return Err(GraphError::NonFinite { node: i, op: "var" });
                    }
                    Cow::Borrowed(*bound)
                }
                Op::Const(t) => Cow::Borrowed(t),
                op => {
                    let get = |id: NodeId| -> &Tensor<S> { values[id.index()].as_deref().expect("input evaluated") };
                    let t = kernels::apply(op, &node.shape, get)?;
                    if !t.is_finite() {
                        return Err(GraphError::NonFinite { node: i, op: op.name() });
                    }
                    Cow::Owned(t)
                }
            };
            self.nodes[i].op.inputs().for_each(|x| {
                let k = x.index();
                uses[k] -= 1;
                if uses[k] == 0 && !keep[k] {
                    values[k] = None;
                }
            });
            values[i] = Some(value);
        }

        Ok(outputs
            .iter()
            .map(|o| values[o.index()].as_ref().expect("output evaluated").clone().into_owned())
            .collect())
    }

    /// Evaluates a single node.
    pub fn eval_one(&self, bindings: &Bindings<'_, S>, output: NodeId) -> Result<Tensor<S>, GraphError> {
        Ok(self.eval(bindings, &[output])?.pop().expect("one output"))
    }
}
