//! Forward kernels for each graph op. All loops run in a fixed order so
//! results are bit-reproducible.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{NodeId, Op};
use crate::error::GraphError;
use crate::tensor::{Real, Tensor};

fn zip<S: Real>(a: &Tensor<S>, b: &Tensor<S>, shape: &[usize], f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(shape, data).expect("shape checked at build time")
}

fn unary<S: Real>(a: &Tensor<S>, shape: &[usize], f: impl Fn(S) -> S) -> Tensor<S> {
    Tensor::new(shape, a.data().iter().map(|&x| f(x)).collect()).expect("shape checked at build time")
}

fn transpose<S: Real>(data: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// `op(a) · op(b)` for row-major matrices.
pub(crate) fn matmul<S: Real>(a: &Tensor<S>, b: &Tensor<S>, ta: bool, tb: bool) -> Tensor<S> {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (n, k) = if ta { (ac, ar) } else { (ar, ac) };
    let m = if tb { br } else { bc };

    let a_rows: Cow<[S]> = if ta { Cow::Owned(transpose(a.data(), ar, ac)) } else { Cow::Borrowed(a.data()) };
    let b_rows: Cow<[S]> = if tb { Cow::Owned(transpose(b.data(), br, bc)) } else { Cow::Borrowed(b.data()) };

    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let arow = &a_rows[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b_rows[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(&[n, m], out).expect("matmul shape")
}

pub(crate) fn softmax_rows<S: Real>(logits: &[S], cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); logits.len()];
    for (row, orow) in logits.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let mut total = S::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            total = total + *o;
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    out
}

fn label_index<S: Real>(value: S, classes: usize) -> Result<usize, GraphError> {
    let v = value.as_f64();
    if v < 0.0 || v != (v as u64) as f64 || v >= classes as f64 {
        return Err(GraphError::InvalidLabel { value: v, classes });
    }
    Ok(v as usize)
}

pub(crate) fn apply<'v, S: Real>(
    op: &Op<S>,
    shape: &[usize],
    get: impl Fn(NodeId) -> &'v Tensor<S>,
) -> Result<Tensor<S>, GraphError> {
    Ok(match *op {
        Op::Var(_) | Op::Const(_) => unreachable!("leaves are not computed"),
        Op::Add(a, b) => zip(get(a), get(b), shape, |x, y| x + y),
        Op::Sub(a, b) => zip(get(a), get(b), shape, |x, y| x - y),
        Op::Mul(a, b) => zip(get(a), get(b), shape, |x, y| x * y),
        Op::Scale(a, factor) => {
            let f = S::lit(factor);
            unary(get(a), shape, |x| x * f)
        }
        Op::MatMul { a, b, ta, tb } => matmul(get(a), get(b), ta, tb),
        Op::Relu(a) => unary(get(a), shape, |x| if x > S::zero() { x } else { S::zero() }),
        Op::Step(a) => unary(get(a), shape, |x| if x > S::zero() { S::one() } else { S::zero() }),
        Op::Tanh(a) => unary(get(a), shape, |x| x.tanh()),
        Op::Softmax(a) => Tensor::new(shape, softmax_rows(get(a).data(), shape[1])).expect("softmax shape"),
        Op::SoftmaxCrossEntropy { logits, labels } => {
            let z = get(logits);
            let y = get(labels);
            let cols = z.shape()[1];
            let rows = z.shape()[0];
            let mut total = S::zero();
            for (row, &label) in z.data().chunks(cols).zip(y.data()) {
                let k = label_index(label, cols)?;
                let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
                let sum = row.iter().fold(S::zero(), |acc, &v| acc + (v - max).exp());
                total = total + (sum.ln() + max - row[k]);
            }
            Tensor::scalar(total / S::from_usize(rows))
        }
        Op::OneHot { labels, classes } => {
            let y = get(labels);
            let mut out = vec![S::zero(); y.len() * classes];
            for (i, &label) in y.data().iter().enumerate() {
                out[i * classes + label_index(label, classes)?] = S::one();
            }
            Tensor::new(shape, out).expect("one_hot shape")
        }
        Op::Sum(a) => Tensor::scalar(get(a).data().iter().fold(S::zero(), |acc, &v| acc + v)),
        Op::Broadcast(a) => Tensor::full(shape, get(a).item()),
        Op::SumRows(a) => {
            let t = get(a);
            let cols = shape[0];
            let mut out = vec![S::zero(); cols];
            for row in t.data().chunks(cols) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            Tensor::vector(out)
        }
        Op::BroadcastRows(a) => {
            let t = get(a);
            let mut out = Vec::with_capacity(shape[0] * shape[1]);
            for _ in 0..shape[0] {
                out.extend_from_slice(t.data());
            }
            Tensor::new(shape, out).expect("broadcast_rows shape")
        }
        Op::RowSum(a) => {
            let t = get(a);
            let cols = t.shape()[1];
            Tensor::vector(
                t.data()
                    .chunks(cols)
                    .map(|row| row.iter().fold(S::zero(), |acc, &v| acc + v))
                    .collect(),
            )
        }
        Op::BroadcastCols(a) => {
            let t = get(a);
            let cols = shape[1];
            let mut out = Vec::with_capacity(shape[0] * cols);
            for &v in t.data() {
                out.extend(core::iter::repeat_n(v, cols));
            }
            Tensor::new(shape, out).expect("broadcast_cols shape")
        }
        Op::Reshape(a) => get(a).clone().reshaped(shape)?,
        Op::MeanPool { input, window } => {
            let t = get(input);
            let [n, h, w, c] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
            let (oh, ow) = (h / window, w / window);
            let inv = S::lit(1.0 / (window * window) as f64);
            let mut out = vec![S::zero(); n * oh * ow * c];
            let src = t.data();
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let o = ((b * oh + y / window) * ow + x / window) * c;
                        let s = ((b * h + y) * w + x) * c;
                        for ch in 0..c {
                            out[o + ch] = out[o + ch] + src[s + ch];
                        }
                    }
                }
            }
            for v in out.iter_mut() {
                *v = *v * inv;
            }
            Tensor::new(shape, out).expect("mean_pool shape")
        }
        Op::Upsample { input, window } => {
            let t = get(input);
            let [n, h, w, c] = [shape[0], shape[1], shape[2], shape[3]];
            let (ih, iw) = (h / window, w / window);
            let src = t.data();
            let mut out = Vec::with_capacity(n * h * w * c);
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let s = ((b * ih + y / window) * iw + x / window) * c;
                        out.extend_from_slice(&src[s..s + c]);
                    }
                }
            }
            Tensor::new(shape, out).expect("upsample shape")
        }
    })
}
