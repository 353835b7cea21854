//! Central finite differences, used as an independent oracle for the
//! engine's gradients.

use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FiniteDiffError {
    #[error("step size must be positive")]
    Step,
    #[error("function value is not finite at coordinate {0}")]
    NonFinite(usize),
}

/// Central-difference gradient of `f` at `point`:
/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate `i`.
pub fn finite_diff<S: Real>(
    mut f: impl FnMut(&Tensor<S>) -> S,
    point: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>, FiniteDiffError> {
    if eps.is_nan() || eps <= S::zero() {
        return Err(FiniteDiffError::Step);
    }
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.len());
    let two_eps = eps + eps;
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + eps;
        let up = f(&probe);
        probe.data_mut()[i] = x - eps;
        let down = f(&probe);
        probe.data_mut()[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(FiniteDiffError::NonFinite(i));
        }
        grad.push((up - down) / two_eps);
    }
    Ok(Tensor::new(point.shape(), grad).expect("same shape as point"))
}

/// Largest per-coordinate relative error between two gradients.
///
/// Each coordinate is scaled by `max(|a_i|, |b_i|, 1e-3 * max_j |a_j|, 1e-12)`
/// so that coordinates orders of magnitude below the gradient's scale are
/// judged against that scale rather than against their own rounding noise.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
