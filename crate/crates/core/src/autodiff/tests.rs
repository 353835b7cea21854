use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::GraphError;
use crate::tensor::{Real, Tensor};

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn eval_scalar_product() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[1]);
    let y = g.var("y", &[1]);
    let p = g.mul(x, y).unwrap();
    let (xv, yv) = (t64(&[1], &[2.0]), t64(&[1], &[3.0]));
    let out = g.eval_one(&Bindings::new().with(x, &xv).with(y, &yv), p).unwrap();
    assert_eq!(out.data(), &[6.0]);
}

#[test]
fn eval_softmax_of_equal_logits() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(t64(&[1, 2], &[0.0, 0.0]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.eval_one(&Bindings::new(), s).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn eval_relu() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(t64(&[2], &[-1.0, 2.0]));
    let r = g.relu(z).unwrap();
    assert_eq!(g.eval_one(&Bindings::new(), r).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn eval_reports_unbound_variable() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[1]);
    let s = g.sum(x).unwrap();
    assert_eq!(g.eval_one(&Bindings::new(), s), Err(GraphError::Unbound("x".into())));
}

#[test]
fn eval_rejects_binding_of_wrong_shape() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[2]);
    let s = g.sum(x).unwrap();
    let v = t64(&[3], &[1.0, 2.0, 3.0]);
    assert!(matches!(
        g.eval_one(&Bindings::new().with(x, &v), s),
        Err(GraphError::BindingShape { .. })
    ));
}

#[test]
fn build_rejects_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.var("a", &[2, 3]);
    let b = g.var("b", &[2, 3]);
    assert!(matches!(g.matmul(a, b), Err(GraphError::Shape(_))));
    let c = g.var("c", &[3]);
    assert!(matches!(g.add(a, c), Err(GraphError::Shape(_))));
}

#[test]
fn eval_flags_non_finite_intermediate() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[1]);
    let big = g.scale(x, 1e300).unwrap();
    let sq = g.mul(big, big).unwrap();
    let v = t64(&[1], &[10.0]);
    assert!(matches!(
        g.eval_one(&Bindings::new().with(x, &v), sq),
        Err(GraphError::NonFinite { op: "mul", .. })
    ));
}

#[test]
fn derivative_of_square() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[]);
    let sq = g.mul(x, x).unwrap();
    let d = g.gradient(sq, &[x]).unwrap()[0];
    let dd = g.gradient(d, &[x]).unwrap()[0];
    for v in [-2.0, 0.0, 3.0] {
        let xv = Tensor::scalar(v);
        let out = g.eval(&Bindings::new().with(x, &xv), &[d, dd]).unwrap();
        assert_eq!(out[0].item(), 2.0 * v);
        assert_eq!(out[1].item(), 2.0);
    }
}

#[test]
fn cross_entropy_gradient_at_symmetric_logits() {
    let mut g = Graph::<f64>::new();
    let z = g.var("z", &[1, 2]);
    let y = g.constant(t64(&[1], &[0.0]));
    let loss = g.softmax_cross_entropy(z, y).unwrap();
    let dz = g.gradient(loss, &[z]).unwrap()[0];
    let zv = t64(&[1, 2], &[0.0, 0.0]);
    let out = g.eval(&Bindings::new().with(z, &zv), &[loss, dz]).unwrap();
    assert!((out[0].item() - core::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(out[1].data(), &[-0.5, 0.5]);
}

#[test]
fn gradient_requires_scalar_target() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[2]);
    let r = g.relu(x).unwrap();
    assert_eq!(g.gradient(r, &[x]), Err(GraphError::NonScalarTarget(vec![2])));
}

#[test]
fn unreachable_variable_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[2]);
    let unused = g.var("unused", &[3, 2]);
    let s = g.sum(x).unwrap();
    let grads = g.gradient(s, &[x, unused]).unwrap();
    let xv = t64(&[2], &[1.0, 2.0]);
    let out = g.eval(&Bindings::new().with(x, &xv), &grads).unwrap();
    assert_eq!(out[0].data(), &[1.0, 1.0]);
    assert_eq!(out[1], Tensor::zeros(&[3, 2]));
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[3]);
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    let d = g.gradient(s, &[x]).unwrap()[0];
    let xv = t64(&[3], &[-1.0, 0.0, 1.0]);
    assert_eq!(g.eval_one(&Bindings::new().with(x, &xv), d).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn second_derivative_of_sum_of_cubes() {
    // d/dx sum(x^3) = 3x^2, and d/dx sum(3x^2) = 6x elementwise.
    let mut g = Graph::<f64>::new();
    let x = g.var("x", &[5]);
    let x2 = g.mul(x, x).unwrap();
    let x3 = g.mul(x2, x).unwrap();
    let f = g.sum(x3).unwrap();
    let d = g.gradient(f, &[x]).unwrap()[0];
    let ds = g.sum(d).unwrap();
    let dd = g.gradient(ds, &[x]).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let vals: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let xv = t64(&[5], &vals);
        let out = g.eval_one(&Bindings::new().with(x, &xv), dd).unwrap();
        for (got, v) in out.data().iter().zip(&vals) {
            let want = 6.0 * v;
            assert!((got - want).abs() <= 1e-4 * want.abs().max(1e-12), "{got} vs {want}");
        }
    }
}

#[test]
fn finite_diff_of_square() {
    let p = Tensor::scalar(3.0f64);
    let d = finite_diff(|x| x.item() * x.item(), &p, 1e-4).unwrap();
    assert!((d.item() - 6.0).abs() < 1e-6);
}

#[test]
fn finite_diff_of_constant_is_zero() {
    let p = t64(&[4], &[1.0, -2.0, 0.5, 9.0]);
    let d = finite_diff(|_| 7.0, &p, 1e-3).unwrap();
    assert_eq!(d, Tensor::zeros(&[4]));
}

#[test]
fn finite_diff_rejects_bad_step_and_non_finite() {
    let p = Tensor::scalar(1.0f64);
    assert_eq!(finite_diff(|x| x.item(), &p, 0.0), Err(FiniteDiffError::Step));
    assert_eq!(finite_diff(|_| f64::NAN, &p, 1e-3), Err(FiniteDiffError::NonFinite(0)));
}

#[test]
fn eval_is_bit_reproducible() {
    let mut g = Graph::<f32>::new();
    let x = g.var("x", &[4, 3]);
    let w = g.var("w", &[3, 5]);
    let h = g.matmul(x, w).unwrap();
    let t = g.tanh(h).unwrap();
    let s = g.softmax(t).unwrap();
    let f = g.sum(s).unwrap();
    let dw = g.gradient(f, &[w]).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xv = Tensor::new(&[4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let wv = Tensor::new(&[3, 5], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b = Bindings::new().with(x, &xv).with(w, &wv);
    let a = g.eval(&b, &[s, dw]).unwrap();
    let c = g.eval(&b, &[s, dw]).unwrap();
    for (p, q) in a.iter().zip(&c) {
        let pb: Vec<u32> = p.data().iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u32> = q.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, qb);
    }
}

/// A scalar function of one variable `x`, built from a fixed op composition.
type Builder<S> = fn(&mut Graph<S>, NodeId, &mut ChaCha8Rng) -> NodeId;

fn rand_const<S: Real>(g: &mut Graph<S>, shape: &[usize], rng: &mut ChaCha8Rng) -> NodeId {
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-1.0..1.0))).collect();
    g.constant(Tensor::new(shape, data).unwrap())
}

fn compositions<S: Real>() -> Vec<(&'static str, [usize; 2], Builder<S>)> {
    vec![
        ("matmul-relu-sum", [2, 4], |g, x, rng| {
            let w = rand_const(g, &[4, 3], rng);
            let h = g.matmul(x, w).unwrap();
            let r = g.relu(h).unwrap();
            let sq = g.mul(r, r).unwrap();
            g.sum(sq).unwrap()
        }),
        ("transposed-matmul-tanh", [2, 4], |g, x, rng| {
            let w = rand_const(g, &[3, 4], rng);
            let h = g.matmul_t(x, w, false, true).unwrap();
            let t = g.tanh(h).unwrap();
            let h2 = g.matmul_t(t, x, true, false).unwrap();
            g.mean(h2).unwrap()
        }),
        ("bias-softmax-ce", [3, 4], |g, x, rng| {
            let b = rand_const(g, &[4], rng);
            let z = g.add_row(x, b).unwrap();
            let labels = g.constant(Tensor::from_f64(&[3], &[0.0, 3.0, 1.0]).unwrap());
            g.softmax_cross_entropy(z, labels).unwrap()
        }),
        ("softmax-weighted", [3, 4], |g, x, rng| {
            let s = g.softmax(x).unwrap();
            let c = rand_const(g, &[3, 4], rng);
            let p = g.mul(s, c).unwrap();
            g.sum(p).unwrap()
        }),
        ("pool-reshape", [4, 8], |g, x, rng| {
            let img = g.reshape(x, &[1, 4, 4, 2]).unwrap();
            let sq = g.mul(img, img).unwrap();
            let pool = g.mean_pool(sq, 2).unwrap();
            let flat = g.reshape(pool, &[1, 8]).unwrap();
            let w = rand_const(g, &[8, 2], rng);
            let z = g.matmul(flat, w).unwrap();
            let t = g.tanh(z).unwrap();
            g.sum(t).unwrap()
        }),
        ("scale-by-scalar", [2, 3], |g, x, rng| {
            let s = g.sum(x).unwrap();
            let c = rand_const(g, &[2, 3], rng);
            let p = g.mul(x, c).unwrap();
            let sc = g.scale_by(s, p).unwrap();
            let rs = g.row_sum(sc).unwrap();
            let bc = g.broadcast_cols(rs, 2).unwrap();
            let sr = g.sum_rows(bc).unwrap();
            let t = g.tanh(sr).unwrap();
            g.sum(t).unwrap()
        }),
    ]
}

/// Checks the engine's gradient in precision `S` against f64 central
/// differences of the same composition (same seed, so same constants).
fn check_compositions<S: Real>(seeds: u64, tol: f64) {
    const EPS: f64 = 1e-6;
    let under_test = compositions::<S>();
    let reference = compositions::<f64>();
    for ((name, shape, build), (_, _, build64)) in under_test.into_iter().zip(reference) {
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for seed in 0..seeds {
            let mut g = Graph::<S>::new();
            let x = g.var("x", &shape);
            let f = build(&mut g, x, &mut ChaCha8Rng::seed_from_u64(seed));
            let d = g.gradient(f, &[x]).unwrap()[0];

            let mut g64 = Graph::<f64>::new();
            let x64 = g64.var("x", &shape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f64_node = build64(&mut g64, x64, &mut rng);
            let fd_at = |p: &Tensor<f64>, h: f64| {
                finite_diff(|q| g64.eval_one(&Bindings::new().with(x64, q), f64_node).unwrap().item(), p, h).unwrap()
            };

            let n = shape[0] * shape[1];
            loop {
                let point = Tensor::<f64>::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let fd = fd_at(&point, EPS);
                // A probe that straddles a relu kink gives step-dependent
                // quotients; draw another point instead.
                let half = fd_at(&point, EPS / 2.0);
                if max_relative_error(&fd.to_f64_vec(), &half.to_f64_vec()) > 1e-5 {
                    kinks += 1;
                    continue;
                }
                let grad = g.eval_one(&Bindings::new().with(x, &point.cast::<S>()), d).unwrap();
                worst = worst.max(max_relative_error(&grad.to_f64_vec(), &fd.to_f64_vec()));
                break;
            }
        }
        assert!(kinks * 100 < seeds, "{name}: {kinks} kink resamples");
        assert!(worst < tol, "{name}: max relative error {worst:e} >= {tol:e}");
    }
}

#[test]
fn gradients_match_finite_differences_f64() {
    check_compositions::<f64>(1000, 1e-4);
}

#[test]
fn gradients_match_finite_differences_f32() {
    check_compositions::<f32>(1000, 1e-2);
}

#[test]
fn second_order_matches_finite_differences() {
    // Hessian-vector product of a two-layer tanh network against central
    // differences of the first-order gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let mut g = Graph::<f64>::new();
        let w = g.var("w", &[3, 4]);
        let x = rand_const(&mut g, &[5, 3], &mut rng);
        let v = rand_const(&mut g, &[3, 4], &mut rng);
        let h = g.matmul(x, w).unwrap();
        let t = g.tanh(h).unwrap();
        let labels = g.constant(Tensor::from_f64(&[5], &[0.0, 1.0, 2.0, 3.0, 0.0]).unwrap());
        let loss = g.softmax_cross_entropy(t, labels).unwrap();
        let dw = g.gradient(loss, &[w]).unwrap()[0];
        let dv = g.mul(dw, v).unwrap();
        let dvs = g.sum(dv).unwrap();
        let hv = g.gradient(dvs, &[w]).unwrap()[0];

        let wv = Tensor::new(&[3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let got = g.eval_one(&Bindings::new().with(w, &wv), hv).unwrap();
        let fd = finite_diff(|p| g.eval_one(&Bindings::new().with(w, p), dvs).unwrap().item(), &wv, 1e-6).unwrap();
        let err = max_relative_error(&got.to_f64_vec(), &fd.to_f64_vec());
        assert!(err < 1e-4, "hvp relative error {err:e}");
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(rows in 1usize..6, cols in 2usize..7, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
            let s = softmax_rows(&z, cols);
            for row in s.chunks(cols) {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }
}
