//! Truncated Becker-Döring kinetics: fluxes, right-hand side, entropy and
//! time integration.
//!
//! The truncation closes the chain with `J_N = 0`, which keeps the mass
//! `sum i c_i` exactly conserved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientModel, DetailedBalance, Equilibrium};
use crate::ode::{self, Admission, ArrowTridiagonal, Method, OdeSystem, SolveStats, StepControl};
use crate::scalar::Real;

/// Flux `J_i = a_i c_1 c_i - b_{i+1} c_{i+1}` for `1 <= i <= N-1`.
pub fn flux<T: Real>(model: &CoefficientModel<T>, c: &[T], i: usize) -> T {
    debug_assert!(i >= 1 && i < model.len());
    model.a(i) * c[0] * c[i - 1] - model.b(i + 1) * c[i]
}

/// All fluxes `J_1..J_{N-1}`.
pub fn fluxes<T: Real>(model: &CoefficientModel<T>, c: &[T]) -> Vec<T> {
    (1..model.len()).map(|i| flux(model, c, i)).collect()
}

fn check_len<T: Real>(model: &CoefficientModel<T>, c: &[T]) -> Result<()> {
    if c.len() != model.len() {
        return Err(Error::LengthMismatch { expected: model.len(), got: c.len() });
    }
    Ok(())
}

fn divergence<T: Real>(j: &[T], out: &mut [T]) {
    let n = out.len();
    let total = j.iter().fold(T::zero(), |acc, &v| acc + v);
    out[0] = -j[0] - total;
    for i in 1..n - 1 {
        out[i] = j[i - 1] - j[i];
    }
    out[n - 1] = j[n - 2];
}

/// `dc/dt` for the truncated system.
pub fn rhs<T: Real>(model: &CoefficientModel<T>, c: &[T]) -> Result<Vec<T>> {
    check_len(model, c)?;
    let mut out = vec![T::zero(); c.len()];
    divergence(&fluxes(model, c), &mut out);
    Ok(out)
}

/// Mass `sum_i i c_i`.
pub fn mass<T: Real>(c: &[T]) -> T {
    c.iter().enumerate().fold(T::zero(), |acc, (k, &v)| acc + T::from_index(k + 1) * v)
}

fn xlogx_term<T: Real>(c: T, ln_ref: T) -> T {
    if c > T::zero() {
        c * (c.ln() - ln_ref - T::one())
    } else {
        T::zero()
    }
}

/// Free energy `V(c) = sum c_i (ln(c_i / Qtilde_i) - 1)`.
pub fn entropy<T: Real>(c: &[T], qtilde: &DetailedBalance<T>) -> Result<T> {
    if c.len() != qtilde.len() {
        return Err(Error::LengthMismatch { expected: qtilde.len(), got: c.len() });
    }
    if c.iter().any(|&v| v < T::zero()) {
        return Err(Error::ContractViolation("entropy needs a nonnegative state".into()));
    }
    Ok(c.iter().enumerate().fold(T::zero(), |acc, (k, &v)| acc + xlogx_term(v, qtilde.ln(k + 1))))
}

/// Relative entropy `sum [c_i ln(c_i/Q_i) - c_i + Q_i]`, zero exactly at `c = Q`.
pub fn relative_entropy<T: Real>(c: &[T], eq: &Equilibrium<T>) -> Result<T> {
    if c.len() != eq.len() {
        return Err(Error::LengthMismatch { expected: eq.len(), got: c.len() });
    }
    if c.iter().any(|&v| v < T::zero()) {
        return Err(Error::ContractViolation("entropy needs a nonnegative state".into()));
    }
    Ok(c.iter()
        .zip(eq.q.iter().zip(&eq.ln_q))
        .fold(T::zero(), |acc, (&v, (&q, &lq))| acc + xlogx_term(v, lq) + q))
}

/// Jacobian of the truncated right-hand side at `c`.
pub fn jacobian<T: Real>(model: &CoefficientModel<T>, c: &[T]) -> ArrowTridiagonal<T> {
    let n = model.len();
    let mut jac = ArrowTridiagonal::zeros(n);
    // dc_i/dt = sum_k D_{k,i} J_k with D_{k,i} = [i = k+1] - [i = k] - [i = 1].
    let scatter = |k: usize, col: usize, d: T, jac: &mut ArrowTridiagonal<T>| {
        // k, col zero-based: flux J_{k+1} depends on c_{col+1} with derivative d.
        jac.add(k + 1, col, d);
        jac.add(k, col, -d);
        jac.add(0, col, -d);
    };
    for k in 0..n - 1 {
        let a = model.a(k + 1);
        let b = model.b(k + 2);
        if k == 0 {
            scatter(0, 0, T::lit(2.0) * a * c[0], &mut jac);
        } else {
            scatter(k, 0, a * c[k], &mut jac);
            scatter(k, k, a * c[0], &mut jac);
        }
        scatter(k, k + 1, -b, &mut jac);
    }
    jac
}

/// Stiffness scale `max_i (a_i c_1 + b_i)`.
pub fn stiffness<T: Real>(model: &CoefficientModel<T>, c1: T) -> T {
    (1..=model.len()).fold(T::zero(), |m, i| m.max(model.a(i) * c1 + model.b(i)))
}

/// Nonlinear truncated system with positivity screening.
pub struct KineticSystem<'a, T> {
    model: &'a CoefficientModel<T>,
    /// Negative entries above `-clamp_rel * max|c|` are rounded to zero.
    clamp_rel: T,
}

impl<'a, T: Real> KineticSystem<'a, T> {
    pub fn new(model: &'a CoefficientModel<T>) -> Self {
        Self { model, clamp_rel: T::lit(1e-14) }
    }
}

impl<T: Real> OdeSystem<T> for KineticSystem<'_, T> {
    fn dim(&self) -> usize {
        self.model.len()
    }

    fn rhs(&self, y: &[T], dy: &mut [T]) {
        let j = fluxes(self.model, y);
        divergence(&j, dy);
    }

    fn max_stable_step(&self, y: &[T]) -> Option<T> {
        let s = stiffness(self.model, y[0].max(T::zero()));
        (s > T::zero()).then(|| T::one() / s)
    }

    fn jacobian(&self, y: &[T]) -> Option<ArrowTridiagonal<T>> {
        Some(jacobian(self.model, y))
    }

    fn admit(&self, y: &mut [T]) -> Admission {
        let scale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let floor = -self.clamp_rel * scale;
        let mut clamped = 0;
        for v in y.iter() {
            if !v.is_finite() || *v < floor {
                return Admission::Reject;
            }
        }
        for v in y.iter_mut() {
            if *v < T::zero() {
                log::trace!("clamping {v:e} to zero");
                *v = T::zero();
                clamped += 1;
            }
        }
        Admission::Accept { clamped }
    }
}

/// Linearization about the equilibrium in concentration variables:
/// `v' = Df(Q) v`, which is `u' = L u` with `v = Q u`.
pub struct LinearizedSystem<T> {
    jac: ArrowTridiagonal<T>,
    step_cap: T,
}

impl<T: Real> LinearizedSystem<T> {
    pub fn new(model: &CoefficientModel<T>, eq: &Equilibrium<T>) -> Self {
        let s = stiffness(model, eq.z);
        Self { jac: jacobian(model, &eq.q), step_cap: T::one() / s }
    }

    pub fn apply(&self, v: &[T], out: &mut [T]) {
        self.jac.matvec(v, out);
    }
}

impl<T: Real> OdeSystem<T> for LinearizedSystem<T> {
    fn dim(&self) -> usize {
        self.jac.dim()
    }

    fn rhs(&self, y: &[T], dy: &mut [T]) {
        self.jac.matvec(y, dy);
    }

    fn max_stable_step(&self, _y: &[T]) -> Option<T> {
        Some(self.step_cap)
    }

    fn jacobian(&self, _y: &[T]) -> Option<ArrowTridiagonal<T>> {
        Some(self.jac.clone())
    }
}

/// User-facing integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::ExplicitAdaptive, rtol: 1e-8, atol: 1e-14, dt_init: 1e-3, dt_max: 1.0 }
    }
}

impl IntegratorConfig {
    pub fn control<T: Real>(&self) -> StepControl<T> {
        StepControl {
            method: self.method,
            rtol: T::lit(self.rtol),
            atol: T::lit(self.atol),
            dt_init: T::lit(self.dt_init),
            dt_max: T::lit(self.dt_max),
            dt_min: T::lit(1e-14),
        }
    }

    pub fn with_tolerance(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// Diagnostics recorded after every accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub entropy: f64,
}

/// States at the requested checkpoints plus the per-step log.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub steps: Vec<StepRecord>,
    pub stats: SolveStats,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> Option<&[T]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Largest relative departure of the logged mass from the initial mass.
    pub fn mass_drift(&self, initial: f64) -> f64 {
        self.steps.iter().fold(0.0f64, |m, s| m.max((s.mass - initial).abs() / initial.abs()))
    }

    /// Largest increase of the logged entropy between consecutive steps.
    pub fn max_entropy_increase(&self) -> f64 {
        self.steps.windows(2).fold(0.0f64, |m, w| m.max(w[1].entropy - w[0].entropy))
    }
}

/// Integrate the nonlinear truncated system from `c0` at time zero.
pub fn integrate<T: Real>(
    model: &CoefficientModel<T>,
    qtilde: &DetailedBalance<T>,
    c0: &[T],
    checkpoints: &[T],
    config: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    check_len(model, c0)?;
    if c0.iter().any(|&v| v < T::zero() || !v.is_finite()) {
        return Err(Error::ContractViolation("initial state must be finite and nonnegative".into()));
    }
    let system = KineticSystem::new(model);
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), steps: Vec::new(), stats: SolveStats::default() };
    let initial = StepRecord {
        t: 0.0,
        dt: 0.0,
        mass: mass(c0).as_f64(),
        entropy: entropy(c0, qtilde)?.as_f64(),
    };
    traj.steps.push(initial);
    let mut steps = std::mem::take(&mut traj.steps);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let stats = ode::solve(
        &system,
        c0,
        T::zero(),
        checkpoints,
        &config.control(),
        |t, dt, y| {
            steps.push(StepRecord {
                t: t.as_f64(),
                dt: dt.as_f64(),
                mass: mass(y).as_f64(),
                entropy: entropy(y, qtilde).map(|e| e.as_f64()).unwrap_or(f64::NAN),
            })
        },
        |_, t, y| {
            times.push(t);
            states.push(y.to_vec());
        },
    )?;
    if stats.clamped_entries > 0 {
        log::info!("{} negative entries clamped to zero", stats.clamped_entries);
    }
    traj.steps = steps;
    traj.times = times;
    traj.states = states;
    traj.stats = stats;
    Ok(traj)
}

/// Integrate the linearized system in concentration variables.
pub fn integrate_linear<T: Real>(
    system: &LinearizedSystem<T>,
    v0: &[T],
    checkpoints: &[T],
    config: &IntegratorConfig,
) -> Result<(Vec<T>, Vec<Vec<T>>, SolveStats)> {
    if v0.len() != system.dim() {
        return Err(Error::LengthMismatch { expected: system.dim(), got: v0.len() });
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let stats = ode::solve(system, v0, T::zero(), checkpoints, &config.control(), |_, _, _| {}, |_, t, y| {
        times.push(t);
        states.push(y.to_vec());
    })?;
    Ok((times, states, stats))
}
