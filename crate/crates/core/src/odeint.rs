//! Fixed-step RK4 integration of `dz/dt = f(z, t, θ)` and adjoint gradients.
//!
//! The forward solvers come in two flavours: value-level ([`solve_forward`],
//! [`integrate`]) which records nothing beyond a per-step scratch tape, and
//! tape-level ([`solve_forward_on_tape`]) which records every stage so that a
//! single backward pass differentiates through the whole discretisation.
//!
//! [`solve_adjoint`] computes loss gradients by integrating the augmented
//! state `[z, a, g]` backward in time, where `a = ∂L/∂z` obeys
//! `da/dt = −aᵀ ∂f/∂z` and the accumulator obeys `dg/dt = −aᵀ ∂f/∂θ`. Vector-
//! Jacobian products come from scratch tapes that live for one field
//! evaluation, so retained memory does not grow with the number of steps.

use crate::diffcore::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Any `|state|` above this aborts the solve.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// RK4 steps per observation interval unless configured otherwise.
pub const DEFAULT_SUBSTEPS: usize = 4;

/// Strictly increasing evaluation times with at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 time points, got {}",
                times.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(format!(
                "times must be strictly increasing (t[{}]={} , t[{}]={})",
                i,
                times[i],
                i + 1,
                times[i + 1]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time stamp".into()));
        }
        Ok(Self(times))
    }

    /// `n` evenly spaced points from `start` to `end` inclusive.
    pub fn linspace(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("linspace needs n >= 2, got {n}")));
        }
        let step = (end - start) / (n - 1) as f64;
        Self::new((0..n).map(|i| start + step * i as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.0[0]
    }

    pub fn end(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }
}

/// Right-hand side `f(z, t, θ)`. Implementations must return a value with
/// the shape of `z` and build it from tape operations so it can be
/// differentiated with respect to both `z` and the bound parameters.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var, t: f64, params: &BoundParams<'_>) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var, f64, &BoundParams<'_>) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, z: Var, t: f64, params: &BoundParams<'_>) -> Result<Var> {
        self(tape, z, t, params)
    }
}

/// States of an ODE solution at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Tensor>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<Tensor>) -> Result<Self> {
        if grid.len() != states.len() {
            return Err(Error::InvalidGrid(format!(
                "{} states for {} grid points",
                states.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &Tensor {
        &self.states[self.states.len() - 1]
    }
}

/// State of the backward adjoint solve: latent state, adjoint `∂L/∂z` and the
/// flattened parameter-gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Tensor,
    pub adjoint: Tensor,
    pub theta_grad: Vec<f64>,
}

impl AugmentedState {
    /// `[z(t₁), ∂L/∂z(t₁), 0]`.
    pub fn initial(z: Tensor, adjoint: Tensor, num_params: usize) -> Result<Self> {
        if z.shape() != adjoint.shape() {
            return Err(Error::ShapeMismatch {
                op: "augmented state",
                lhs: z.shape().to_vec(),
                rhs: adjoint.shape().to_vec(),
            });
        }
        Ok(Self {
            z,
            adjoint,
            theta_grad: vec![0.0; num_params],
        })
    }
}

/// Gradients returned by [`solve_adjoint`].
#[derive(Debug, Clone)]
pub struct AdjointGradients {
    /// `dL/dθ` keyed like the parameter set passed in.
    pub params: ParamSet,
    /// `dL/dz(t₀)`, the adjoint at the first grid point.
    pub z0: Tensor,
}

fn check_state(state: &Tensor, t: f64, step: usize) -> Result<()> {
    let cols = state.cols().max(1);
    for (i, v) in state.data().iter().enumerate() {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            let row = (state.rank() >= 2).then_some(i / cols);
            return Err(Error::IntegrationDiverged { t, step, row });
        }
    }
    Ok(())
}

fn diverged_at(err: Error, t: f64, step: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::IntegrationDiverged { t, step, row: None },
        other => other,
    }
}

/// One classical RK4 step recorded on `tape`:
/// `z + (h/6)(k₁ + 2k₂ + 2k₃ + k₄)`.
pub fn rk4_step_on_tape(
    tape: &mut Tape,
    f: &dyn VectorField,
    z: Var,
    t: f64,
    h: f64,
    params: &BoundParams<'_>,
) -> Result<Var> {
    let k1 = f.eval(tape, z, t, params)?;
    let s = tape.scale(k1, 0.5 * h)?;
    let z2 = tape.add(z, s)?;
    let k2 = f.eval(tape, z2, t + 0.5 * h, params)?;
    let s = tape.scale(k2, 0.5 * h)?;
    let z3 = tape.add(z, s)?;
    let k3 = f.eval(tape, z3, t + 0.5 * h, params)?;
    let s = tape.scale(k3, h)?;
    let z4 = tape.add(z, s)?;
    let k4 = f.eval(tape, z4, t + h, params)?;

    let k23 = tape.add(k2, k3)?;
    let k23 = tape.scale(k23, 2.0)?;
    let acc = tape.add(k1, k23)?;
    let acc = tape.add(acc, k4)?;
    let inc = tape.scale(acc, h / 6.0)?;
    tape.add(z, inc)
}

/// Value-level RK4 step. Fails with [`Error::IntegrationDiverged`] when a
/// stage or the result is non-finite or exceeds [`DIVERGENCE_LIMIT`].
pub fn rk4_step(f: &dyn VectorField, z: &Tensor, t: f64, h: f64, params: &ParamSet) -> Result<Tensor> {
    step_indexed(f, z, t, h, params, 0)
}

fn step_indexed(
    f: &dyn VectorField,
    z: &Tensor,
    t: f64,
    h: f64,
    params: &ParamSet,
    step: usize,
) -> Result<Tensor> {
    if h == 0.0 {
        return Err(Error::invalid("RK4 step size must be non-zero"));
    }
    let mut tape = Tape::new();
    let bound = tape.bind(params, false);
    let zv = tape.constant(z.clone());
    let out = rk4_step_on_tape(&mut tape, f, zv, t, h, &bound).map_err(|e| diverged_at(e, t, step))?;
    let next = tape.value(out).clone();
    check_state(&next, t + h, step)?;
    Ok(next)
}

fn check_substeps(substeps: usize) -> Result<()> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    Ok(())
}

/// Integrates from `times[0]` through each following time stamp in order.
/// `times` must be strictly monotone but may run backward (negative steps);
/// each interval is divided into `substeps` equal RK4 steps. Returns one
/// state per entry of `times`, starting with `z0`.
pub fn integrate(
    f: &dyn VectorField,
    z0: &Tensor,
    times: &[f64],
    params: &ParamSet,
    substeps: usize,
) -> Result<Vec<Tensor>> {
    check_substeps(substeps)?;
    check_state(z0, times.first().copied().unwrap_or(0.0), 0)?;
    let mut states = Vec::with_capacity(times.len());
    states.push(z0.clone());
    let mut z = z0.clone();
    let mut step = 0;
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 == t0 || !(t1 - t0).is_finite() {
            return Err(Error::InvalidGrid(format!("degenerate interval [{t0}, {t1}]")));
        }
        let h = (t1 - t0) / substeps as f64;
        for s in 0..substeps {
            z = step_indexed(f, &z, t0 + s as f64 * h, h, params, step)?;
            step += 1;
        }
        states.push(z.clone());
    }
    Ok(states)
}

/// Solves the initial value problem on `grid`; `states[0] == z0`.
pub fn solve_forward(
    f: &dyn VectorField,
    z0: &Tensor,
    grid: &TimeGrid,
    params: &ParamSet,
    substeps: usize,
) -> Result<Trajectory> {
    let states = integrate(f, z0, grid.times(), params, substeps)?;
    Trajectory::new(grid.clone(), states)
}

/// Tape-level counterpart of [`integrate`]: every stage is recorded, so a
/// backward pass through the returned states differentiates the discrete
/// solver exactly.
pub fn solve_forward_on_tape(
    tape: &mut Tape,
    f: &dyn VectorField,
    z0: Var,
    times: &[f64],
    params: &BoundParams<'_>,
    substeps: usize,
) -> Result<Vec<Var>> {
    check_substeps(substeps)?;
    let mut states = vec![z0];
    let mut z = z0;
    let mut step = 0;
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = (t1 - t0) / substeps as f64;
        for s in 0..substeps {
            let t = t0 + s as f64 * h;
            z = rk4_step_on_tape(tape, f, z, t, h, params).map_err(|e| diverged_at(e, t, step))?;
            check_state(tape.value(z), t + h, step)?;
            step += 1;
        }
        states.push(z);
    }
    Ok(states)
}

/// Augmented dynamics `(f, −aᵀ∂f/∂z, −aᵀ∂f/∂θ)` evaluated on a scratch tape.
fn augmented_rhs(
    f: &dyn VectorField,
    z: &Tensor,
    a: &Tensor,
    t: f64,
    params: &ParamSet,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = tape.bind(params, true);
    let zv = tape.variable(z.clone());
    let fz = f.eval(&mut tape, zv, t, &bound)?;
    let av = tape.constant(a.clone());
    let prod = tape.mul(fz, av)?;
    let s = tape.sum(prod)?;
    tape.backward_from(s)?;
    let dz = tape.grad(zv).scaled(-1.0);
    let mut dtheta = Vec::with_capacity(params.num_scalars());
    for &v in bound.vars() {
        dtheta.extend(tape.grad(v).data().iter().map(|g| -g));
    }
    Ok((tape.value(fz).clone(), dz, dtheta))
}

fn shifted(base: &Tensor, alpha: f64, dir: &Tensor) -> Tensor {
    let mut out = base.clone();
    out.axpy(alpha, dir).expect("matching shapes");
    out
}

/// One backward RK4 step (`h < 0`) of the augmented system.
fn augmented_step(
    f: &dyn VectorField,
    state: &mut AugmentedState,
    t: f64,
    h: f64,
    params: &ParamSet,
    step: usize,
) -> Result<()> {
    let eval = |z: &Tensor, a: &Tensor, t: f64| {
        augmented_rhs(f, z, a, t, params).map_err(|e| diverged_at(e, t, step))
    };
    let (z, a) = (&state.z, &state.adjoint);
    let (f1, a1, g1) = eval(z, a, t)?;
    let (f2, a2, g2) = eval(&shifted(z, 0.5 * h, &f1), &shifted(a, 0.5 * h, &a1), t + 0.5 * h)?;
    let (f3, a3, g3) = eval(&shifted(z, 0.5 * h, &f2), &shifted(a, 0.5 * h, &a2), t + 0.5 * h)?;
    let (f4, a4, g4) = eval(&shifted(z, h, &f3), &shifted(a, h, &a3), t + h)?;

    let combine = |x: &mut [f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| {
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    };
    combine(state.z.data_mut(), f1.data(), f2.data(), f3.data(), f4.data());
    combine(state.adjoint.data_mut(), a1.data(), a2.data(), a3.data(), a4.data());
    combine(&mut state.theta_grad, &g1, &g2, &g3, &g4);
    check_state(&state.z, t + h, step)?;
    check_state(&state.adjoint, t + h, step)
}

/// Adjoint-method gradients of a loss that depends on the trajectory states.
///
/// `dl_dz[i]` is `∂L/∂z(tᵢ)` for the explicit dependence of the loss on the
/// state at grid point `i`. The augmented state starts at the last grid
/// point as `[z(t₁), dl_dz[last], 0]` and is integrated backward; whenever an
/// earlier observation time is reached the adjoint jumps by that point's
/// `dl_dz`. The latent state is re-anchored to the stored trajectory at each
/// grid point. Returns `dL/dθ` and `dL/dz(t₀)`.
pub fn solve_adjoint(
    f: &dyn VectorField,
    traj: &Trajectory,
    dl_dz: &[Tensor],
    params: &ParamSet,
    substeps: usize,
) -> Result<AdjointGradients> {
    check_substeps(substeps)?;
    if dl_dz.len() != traj.len() {
        return Err(Error::InvalidGrid(format!(
            "{} loss gradients for a trajectory of {} points",
            dl_dz.len(),
            traj.len()
        )));
    }
    for (g, z) in dl_dz.iter().zip(&traj.states) {
        if g.shape() != z.shape() {
            return Err(Error::ShapeMismatch {
                op: "solve_adjoint",
                lhs: z.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    let times = traj.grid.times();
    let last = traj.len() - 1;
    let mut state = AugmentedState::initial(traj.states[last].clone(), dl_dz[last].clone(), params.num_scalars())?;
    let mut step = 0;
    for i in (1..=last).rev() {
        let (t1, t0) = (times[i], times[i - 1]);
        let h = (t0 - t1) / substeps as f64;
        state.z = traj.states[i].clone();
        for s in 0..substeps {
            augmented_step(f, &mut state, t1 + s as f64 * h, h, params, step)?;
            step += 1;
        }
        state.adjoint.axpy(1.0, &dl_dz[i - 1])?;
    }
    Ok(AdjointGradients {
        params: params.unflatten(&state.theta_grad)?,
        z0: state.adjoint,
    })
}
