//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; a single backward
//! pass then yields gradients for every recorded value. Broadcasting is limited
//! to scalar-with-tensor so that shape errors stay loud.

mod params;
mod tape;
mod tensor;

pub use params::ParamSet;
pub use tape::{live_tape_nodes, peak_tape_nodes, reset_peak_tape_nodes, BoundParams, Tape, Var};
pub use tensor::Tensor;


use crate::error::{Error, Result};


/// Central-difference gradient of `f` at `params`:
/// `(f(θ + eps·eᵢ) − f(θ − eps·eᵢ)) / (2·eps)` for every coordinate.
pub fn finite_diff<F>(mut f: F, params: &ParamSet, eps: f64) -> Result<ParamSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let base = params.flatten();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let up = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i] - eps;
        let down = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i];
        grad[i] = (up - down) / (2.0 * eps);
    }
    params.unflatten(&grad)
}

/// Gradient of `loss_fn` (built on a fresh tape) with respect to `params`.
pub fn grad_of<F>(params: &ParamSet, loss_fn: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &BoundParams<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(params, true);
    let loss = loss_fn(&mut tape, &bound)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss, &bound)?;
    Ok((value, grads))
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &ParamSet, b: &ParamSet, floor: f64) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
