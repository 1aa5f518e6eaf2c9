//! Decay experiments around the equilibrium and the Duhamel consistency check.
//!
//! Trajectories are stepped in concentration variables, where a polynomial
//! tail is an ordinary small vector. In `h` variables the same data is
//! exponentially large in `i`, which would leave nothing of the head after
//! rounding.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::analysis::fit::{crossover_time, fit_rate, local_slopes, RateFit};
use crate::analysis::norms::scaled_moment_norm;
use crate::dynamics::{integrate, integrate_linear, IntegratorConfig, LinearizedSystem};
use crate::error::{Error, Result};
use crate::linops::OperatorBundle;
use crate::model::{CoefficientModel, Equilibrium};
use crate::scalar::Real;

/// Window of the sliding local slope used for crossover detection.
pub const SLOPE_WINDOW: usize = 10;
/// The crossover is flagged once the local slope is this many times steeper than the target.
pub const CROSSOVER_FACTOR: f64 = 2.0;
/// Norms below this fraction of the largest recorded norm are treated as rounding.
pub const ROUNDING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NSensitivity {
    pub n_other: usize,
    pub constant_other: f64,
    /// `constant / constant_other`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub n: usize,
    pub k: f64,
    pub m: f64,
    /// Exponent the domination constant is measured against.
    pub target: f64,
    pub times: Vec<f64>,
    /// `||h(t)||_{X_{1+m}}`.
    pub norms: Vec<f64>,
    /// `||h(t)||_{X_{1+k}}`.
    pub high_norms: Vec<f64>,
    pub h1: Vec<f64>,
    pub local_slopes: Vec<Option<f64>>,
    pub initial_norm: f64,
    pub crossover_time: Option<f64>,
    /// Last time included in the domination sup.
    pub window_end: f64,
    pub domination_constant: f64,
    /// Same sup over the whole run.
    pub domination_constant_full: f64,
    pub fit_window: (f64, f64),
    pub fitted: Option<RateFit>,
    /// `|sum_i i v_i| / sum_i i |v_i(0)|` at worst along the run.
    pub zero_mass_drift: f64,
    pub n_sensitivity: Option<NSensitivity>,
    /// Set when the smallness hypothesis failed during the run.
    pub stability_breach: Option<String>,
}

impl DecayReport {
    /// Header and rows of the flat CSV export.
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["t", &format!("norm_x{}", 1.0 + self.m), &format!("norm_x{}", 1.0 + self.k), "h1", "local_slope"];
        let rows = (0..self.times.len())
            .map(|j| {
                vec![
                    self.times[j].to_string(),
                    self.norms[j].to_string(),
                    self.high_norms[j].to_string(),
                    self.h1[j].to_string(),
                    self.local_slopes[j].map(|s| s.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        (header.iter().map(|s| s.to_string()).collect(), rows)
    }

    pub fn attach_sensitivity(&mut self, other: &DecayReport) {
        let ratio = if other.domination_constant > 0.0 {
            self.domination_constant / other.domination_constant
        } else {
            f64::NAN
        };
        self.n_sensitivity = Some(NSensitivity { n_other: other.n, constant_other: other.domination_constant, ratio });
    }
}

/// `sup_{t <= end} norm(t) (1+t)^exponent / initial`.
pub fn domination_constant(times: &[f64], norms: &[f64], initial: f64, exponent: f64, end: f64) -> f64 {
    if initial == 0.0 {
        return 0.0;
    }
    times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t <= end)
        .map(|(t, n)| n * (1.0 + t).powf(exponent) / initial)
        .fold(0.0, f64::max)
}

struct Series {
    times: Vec<f64>,
    norms: Vec<f64>,
    high: Vec<f64>,
    h1: Vec<f64>,
    drift: f64,
}

fn series_from<T: Real>(times: &[T], diffs: &[Vec<T>], q1: f64, k: f64, m: f64) -> Series {
    let scale = diffs
        .first()
        .map(|v| v.iter().enumerate().map(|(j, x)| (j + 1) as f64 * x.as_f64().abs()).sum::<f64>())
        .unwrap_or(0.0);
    let mut drift = 0.0f64;
    for v in diffs {
        let m0: f64 = v.iter().enumerate().map(|(j, x)| (j + 1) as f64 * x.as_f64()).sum();
        if scale > 0.0 {
            drift = drift.max(m0.abs() / scale);
        }
    }
    Series {
        times: times.iter().map(|t| t.as_f64()).collect(),
        norms: diffs.iter().map(|v| scaled_moment_norm(v, T::lit(m)).as_f64()).collect(),
        high: diffs.iter().map(|v| scaled_moment_norm(v, T::lit(k)).as_f64()).collect(),
        h1: diffs.iter().map(|v| v[0].as_f64() / q1).collect(),
        drift,
    }
}

fn report_from(n: usize, k: f64, m: f64, target: f64, s: Series, fit_window: Option<(f64, f64)>) -> DecayReport {
    let slopes = local_slopes(&s.times, &s.norms, SLOPE_WINDOW);
    let floor = ROUNDING_FLOOR * s.norms.iter().cloned().fold(0.0, f64::max);
    let cross = crossover_time(&s.times, &s.norms, target, CROSSOVER_FACTOR, SLOPE_WINDOW, floor);
    let t_end = s.times.last().copied().unwrap_or(0.0);
    let window_end = cross.unwrap_or(t_end);
    let initial = s.high.first().copied().unwrap_or(0.0);
    let constant = domination_constant(&s.times, &s.norms, initial, target, window_end);
    let constant_full = domination_constant(&s.times, &s.norms, initial, target, f64::INFINITY);
    let fit_window = fit_window.unwrap_or((1.0, window_end));
    let fitted = fit_rate(&s.times, &s.norms, fit_window).ok();
    DecayReport {
        n,
        k,
        m,
        target,
        times: s.times,
        norms: s.norms,
        high_norms: s.high,
        h1: s.h1,
        local_slopes: slopes,
        initial_norm: initial,
        crossover_time: cross,
        window_end,
        domination_constant: constant,
        domination_constant_full: constant_full,
        fit_window,
        fitted,
        zero_mass_drift: s.drift,
        n_sensitivity: None,
        stability_breach: None,
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("time grid must start at 0 and increase strictly".into()));
    }
    Ok(())
}

/// Evolve `u' = L u` from zero-mass `u0` and measure decay of `X_{1+m}`
/// against the rate `k - m`.
pub fn linear_decay_experiment<T: Real>(
    model: &CoefficientModel<T>,
    eq: &Equilibrium<T>,
    u0: &[T],
    k: f64,
    m: f64,
    t_grid: &[f64],
    integrator: &IntegratorConfig,
    fit_window: Option<(f64, f64)>,
) -> Result<DecayReport> {
    if !(0.0 < m && m < k) {
        return Err(Error::Validation(format!("need 0 < m < k, got m = {m}, k = {k}")));
    }
    check_grid(t_grid)?;
    let system = LinearizedSystem::new(model, eq);
    let v0: Vec<T> = u0.iter().zip(&eq.q).map(|(&u, &q)| q * u).collect();
    let checkpoints: Vec<T> = t_grid[1..].iter().map(|&t| T::lit(t)).collect();
    let (mut times, mut states, _) = integrate_linear(&system, &v0, &checkpoints, integrator)?;
    times.insert(0, T::zero());
    states.insert(0, v0);
    let s = series_from(&times, &states, eq.q[0].as_f64(), k, m);
    Ok(report_from(eq.len(), k, m, k - m, s, fit_window))
}

/// Run the full nonlinear system from `c = Q (1 + h0)` and measure decay of
/// `X_{1+m}` against the rate `k - m - 1`.
///
/// `delta_hat` is the admissible size of `|h_1|`; exceeding it is recorded in
/// the report, not raised.
pub fn nonlinear_decay_experiment<T: Real>(
    model: &CoefficientModel<T>,
    eq: &Equilibrium<T>,
    h0: &[T],
    k: f64,
    m: f64,
    t_grid: &[f64],
    integrator: &IntegratorConfig,
    delta_hat: Option<f64>,
    fit_window: Option<(f64, f64)>,
) -> Result<DecayReport> {
    if !(m > 0.0 && k > m + 2.0) {
        return Err(Error::Validation(format!("need m > 0 and k > m + 2, got m = {m}, k = {k}")));
    }
    check_grid(t_grid)?;
    if h0.len() != eq.len() {
        return Err(Error::LengthMismatch { expected: eq.len(), got: h0.len() });
    }
    let c0: Vec<T> = h0.iter().zip(&eq.q).map(|(&h, &q)| q + q * h).collect();
    let checkpoints: Vec<T> = t_grid[1..].iter().map(|&t| T::lit(t)).collect();
    let traj = integrate(model, &eq.qtilde, &c0, &checkpoints, integrator)?;
    let mut times = vec![T::zero()];
    times.extend(traj.times);
    let mut diffs = vec![h0.iter().zip(&eq.q).map(|(&h, &q)| q * h).collect::<Vec<T>>()];
    diffs.extend(traj.states.iter().map(|c| c.iter().zip(&eq.q).map(|(&c, &q)| c - q).collect()));
    let s = series_from(&times, &diffs, eq.q[0].as_f64(), k, m);
    let mut report = report_from(eq.len(), k, m, k - m - 1.0, s, fit_window);
    if let Some(limit) = delta_hat {
        let (j, worst) = report.h1.iter().enumerate().fold((0, 0.0f64), |acc, (j, h)| if h.abs() > acc.1 { (j, h.abs()) } else { acc });
        if worst >= limit {
            report.stability_breach = Some(format!("|h_1| = {worst:e} at t = {} exceeds {limit:e}", report.times[j]));
        }
    }
    Ok(report)
}

/// One run of a smallness scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPoint {
    pub amplitude: f64,
    /// `||h(0)||_{X_{1+k}}`.
    pub delta: f64,
    /// `sup_t ||h(t)||_{X_{1+k}}`.
    pub epsilon: f64,
    pub sup_h1: f64,
    /// `epsilon / delta`.
    pub growth: f64,
}

impl StabilityPoint {
    pub fn from_report(amplitude: f64, r: &DecayReport) -> Self {
        let epsilon = r.high_norms.iter().cloned().fold(0.0, f64::max);
        let sup_h1 = r.h1.iter().fold(0.0f64, |a, h| a.max(h.abs()));
        let growth = if r.initial_norm > 0.0 { epsilon / r.initial_norm } else { 0.0 };
        Self { amplitude, delta: r.initial_norm, epsilon, sup_h1, growth }
    }
}

/// Terms of the Duhamel check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuhamelReport {
    pub times: Vec<f64>,
    /// `||h(t) - e^{Lt} h(0)||_{X_1}`: the size of the nonlinear contribution.
    pub linear_residual: Vec<f64>,
    /// `||h(t) - e^{Lt} h(0) - int_0^t e^{L(t-s)} h_1 Gamma h ds||_{X_1}`.
    pub full_residual: Vec<f64>,
    pub state_norm: Vec<f64>,
    pub max_linear_residual: f64,
    pub max_full_residual: f64,
    /// Largest of `full_residual / ||h(t)||_{X_1}`.
    pub max_relative_residual: f64,
}

/// Largest relative residual before the check is treated as a formulation failure.
pub const DUHAMEL_TOLERANCE: f64 = 1e-3;

/// Propagator `e^{Lt}` through the eigendecomposition of the symmetrized `L`.
pub struct Propagator {
    sqrt_q: Vec<f64>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl Propagator {
    pub fn new<T: Real>(bundle: &OperatorBundle<T>) -> Self {
        let n = bundle.len();
        let sqrt_q: Vec<f64> = bundle.q().iter().map(|q| q.as_f64().sqrt()).collect();
        let l = bundle.l();
        let mut s = DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in l.entries() {
            s[(i, j)] += 0.5 * v.as_f64() * sqrt_q[i] / sqrt_q[j];
            s[(j, i)] += 0.5 * v.as_f64() * sqrt_q[i] / sqrt_q[j];
        }
        let eig = SymmetricEigen::new(s);
        Self { sqrt_q, values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    /// Modal coordinates `V^T Q^{1/2} x`.
    pub fn to_modes(&self, x: &[f64]) -> DVector<f64> {
        let y = DVector::from_iterator(x.len(), x.iter().zip(&self.sqrt_q).map(|(a, s)| a * s));
        self.vectors.tr_mul(&y)
    }

    pub fn from_modes(&self, modes: &DVector<f64>) -> Vec<f64> {
        let y = &self.vectors * modes;
        y.iter().zip(&self.sqrt_q).map(|(a, s)| a / s).collect()
    }

    pub fn apply(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut modes = self.to_modes(x);
        for (m, l) in modes.iter_mut().zip(self.values.iter()) {
            *m *= (l * t).exp();
        }
        self.from_modes(&modes)
    }
}

/// Weights of `f_j` and `f_{j+1}` in `int e^{l (t - s)} f(s) ds` over one
/// interval of length `dt` ending at `t - a`, for `f` linear in `s`.
fn linear_exp_weights(l: f64, a: f64, dt: f64) -> (f64, f64) {
    let x = l * dt;
    let (phi, psi) = if x.abs() < 1e-4 {
        (1.0 + x / 2.0 + x * x / 6.0, 0.5 + x / 3.0 + x * x / 8.0)
    } else {
        let e = x.exp();
        ((e - 1.0) / x, (e * (x - 1.0) + 1.0) / (x * x))
    };
    let scale = (l * a).exp() * dt;
    (scale * psi, scale * (phi - psi))
}

fn x1_norm(h: &[f64], q: &[f64]) -> f64 {
    h.iter().zip(q).enumerate().map(|(j, (x, q))| q * (j + 1) as f64 * x.abs()).sum()
}

/// Check `h(t) = e^{Lt} h(0) + int_0^t e^{L(t-s)} h_1(s) Gamma h(s) ds` on a
/// trajectory given in `h` variables at increasing `times` starting from 0.
/// The forcing is interpolated linearly between recorded times and each
/// piece is integrated exactly against the modal exponentials, which keeps
/// the quadrature stable on stiff modes.
pub fn duhamel_residual<T: Real>(bundle: &OperatorBundle<T>, times: &[f64], hs: &[Vec<f64>]) -> Result<DuhamelReport> {
    if times.len() != hs.len() || times.is_empty() || times[0] != 0.0 {
        return Err(Error::Validation("trajectory must start at t = 0 with one state per time".into()));
    }
    let q: Vec<f64> = bundle.q().iter().map(|v| v.as_f64()).collect();
    let prop = Propagator::new(bundle);
    let gamma = bundle.gamma();
    let forcing: Vec<DVector<f64>> = hs
        .iter()
        .map(|h| {
            let ht: Vec<T> = h.iter().map(|&x| T::lit(x)).collect();
            let g: Vec<f64> = OperatorBundle::apply(gamma, &ht).iter().map(|v| v.as_f64() * h[0]).collect();
            prop.to_modes(&g)
        })
        .collect();
    let h0_modes = prop.to_modes(&hs[0]);
    let mut report = DuhamelReport {
        times: times.to_vec(),
        linear_residual: Vec::with_capacity(times.len()),
        full_residual: Vec::with_capacity(times.len()),
        state_norm: Vec::with_capacity(times.len()),
        max_linear_residual: 0.0,
        max_full_residual: 0.0,
        max_relative_residual: 0.0,
    };
    for (n, &t) in times.iter().enumerate() {
        let mut free = h0_modes.clone();
        let mut integral = DVector::<f64>::zeros(free.len());
        for (idx, l) in prop.values.iter().copied().enumerate() {
            free[idx] *= (l * t).exp();
        }
        for j in 0..n {
            let dt = times[j + 1] - times[j];
            for (idx, l) in prop.values.iter().copied().enumerate() {
                let (w0, w1) = linear_exp_weights(l, t - times[j + 1], dt);
                integral[idx] += w0 * forcing[j][idx] + w1 * forcing[j + 1][idx];
            }
        }
        let free = prop.from_modes(&free);
        let integral = prop.from_modes(&integral);
        let lin: Vec<f64> = hs[n].iter().zip(&free).map(|(a, b)| a - b).collect();
        let full: Vec<f64> = lin.iter().zip(&integral).map(|(a, b)| a - b).collect();
        let (rl, rf, hn) = (x1_norm(&lin, &q), x1_norm(&full, &q), x1_norm(&hs[n], &q));
        report.linear_residual.push(rl);
        report.full_residual.push(rf);
        report.state_norm.push(hn);
        report.max_linear_residual = report.max_linear_residual.max(rl);
        report.max_full_residual = report.max_full_residual.max(rf);
        if hn > 0.0 {
            report.max_relative_residual = report.max_relative_residual.max(rf / hn);
        }
    }
    if report.max_relative_residual > DUHAMEL_TOLERANCE {
        return Err(Error::FormulationInconsistency(report.max_relative_residual));
    }
    Ok(report)
}

/// Run the nonlinear system from `h0` and return the trajectory in `h` variables.
pub fn h_trajectory<T: Real>(
    model: &CoefficientModel<T>,
    eq: &Equilibrium<T>,
    h0: &[T],
    t_grid: &[f64],
    integrator: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>> {
    check_grid(t_grid)?;
    let c0: Vec<T> = h0.iter().zip(&eq.q).map(|(&h, &q)| q + q * h).collect();
    let checkpoints: Vec<T> = t_grid[1..].iter().map(|&t| T::lit(t)).collect();
    let traj = integrate(model, &eq.qtilde, &c0, &checkpoints, integrator)?;
    let mut out = vec![h0.iter().map(|h| h.as_f64()).collect::<Vec<f64>>()];
    out.extend(traj.states.iter().map(|c| c.iter().zip(&eq.q).map(|(&c, &q)| ((c - q) / q).as_f64()).collect()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fit::log_grid;
    use crate::analysis::perturbation::{make_polynomial_tail, SignPattern, TailWeight};

    fn setup(n: usize) -> (CoefficientModel<f64>, Equilibrium<f64>) {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.5, 1.0, 2.0, n).unwrap();
        let eq = Equilibrium::at_fraction(&m, 0.5).unwrap();
        (m, eq)
    }

    #[test]
    fn domination_constant_of_exact_power_law() {
        let t = log_grid(100.0, 40);
        let v: Vec<f64> = t.iter().map(|t| 5.0 * (1.0 + t).powf(-2.0)).collect();
        assert!((domination_constant(&t, &v, 2.5, 2.0, 100.0) - 2.0).abs() < 1e-12);
        assert_eq!(domination_constant(&t, &v, 0.0, 2.0, 100.0), 0.0);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (m, eq) = setup(40);
        let t = log_grid(5.0, 12);
        let r = linear_decay_experiment(&m, &eq, &[0.0; 40], 3.0, 1.0, &t, &IntegratorConfig::default(), None).unwrap();
        assert!(r.norms.iter().all(|&v| v == 0.0));
        assert_eq!(r.domination_constant, 0.0);
        let r = nonlinear_decay_experiment(&m, &eq, &[0.0; 40], 3.5, 1.0, &t, &IntegratorConfig::default(), None, None).unwrap();
        assert!(r.norms.iter().all(|&v| v <= 1e-15));
    }

    #[test]
    fn exponential_tail_decays_exponentially() {
        let (m, eq) = setup(60);
        let raw: Vec<f64> = (1..=60).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (-(i as f64)).exp() / eq.q(i)).collect();
        let u0 = crate::analysis::perturbation::project_zero_mass(&raw, &eq.q, crate::analysis::Compensation::Monomer).unwrap().h;
        let t: Vec<f64> = (0..=40).map(|j| 0.5 * j as f64).collect();
        let r = linear_decay_experiment(&m, &eq, &u0, 3.0, 1.0, &t, &IntegratorConfig::default(), None).unwrap();
        let logs: Vec<f64> = r.norms.iter().map(|v| v.ln()).collect();
        let rate = -(logs[40] - logs[20]) / 10.0;
        assert!(rate > 0.1, "rate {rate}");
        assert!(r.zero_mass_drift < 1e-9);
    }

    #[test]
    fn nonlinear_requires_gap_between_exponents() {
        let (m, eq) = setup(20);
        let t = log_grid(1.0, 12);
        assert!(nonlinear_decay_experiment(&m, &eq, &[0.0; 20], 3.0, 1.0, &t, &IntegratorConfig::default(), None, None).is_err());
    }

    #[test]
    fn propagator_matches_linear_integration() {
        let (m, eq) = setup(50);
        let bundle = OperatorBundle::assemble(&m, &eq).unwrap();
        let prop = Propagator::new(&bundle);
        let tail = make_polynomial_tail(4.0, SignPattern::Alternating, 1e-2, TailWeight::Relative, &eq.q, &[1.0]).unwrap();
        let u0 = tail.perturbation.h;
        let cfg = IntegratorConfig::default().with_tolerance(1e-11, 1e-16);
        let system = LinearizedSystem::new(&m, &eq);
        let v0: Vec<f64> = u0.iter().zip(&eq.q).map(|(u, q)| u * q).collect();
        let (_, states, _) = integrate_linear(&system, &v0, &[2.0], &cfg).unwrap();
        let by_ode: Vec<f64> = states[0].iter().zip(&eq.q).map(|(v, q)| v / q).collect();
        let by_eig = prop.apply(2.0, &u0);
        let diff: Vec<f64> = by_ode.iter().zip(&by_eig).map(|(a, b)| a - b).collect();
        assert!(x1_norm(&diff, &eq.q) <= 1e-8 * x1_norm(&u0, &eq.q));
    }

    #[test]
    fn exponential_weights_match_quadrature() {
        for &(l, a, dt) in &[(-3.0, 0.5, 0.2), (-1e-6, 0.0, 1.0), (-400.0, 0.0, 0.1), (0.0, 1.0, 0.3)] {
            let f = |s: f64| (l * (a + dt - s)).exp() * (1.0 - s / dt);
            let g = |s: f64| (l * (a + dt - s)).exp() * (s / dt);
            let (w0, w1) = linear_exp_weights(l, a, dt);
            let q0 = crate::interp::adaptive_simpson(&f, 0.0, dt, 1e-15);
            let q1 = crate::interp::adaptive_simpson(&g, 0.0, dt, 1e-15);
            assert!((w0 - q0).abs() <= 1e-9 * q0.abs().max(1e-300), "l = {l}: {w0} vs {q0}");
            assert!((w1 - q1).abs() <= 1e-9 * q1.abs().max(1e-300), "l = {l}: {w1} vs {q1}");
        }
    }

    #[test]
    fn duhamel_zero_and_refinement() {
        let (m, eq) = setup(60);
        let bundle = OperatorBundle::assemble(&m, &eq).unwrap();
        let cfg = IntegratorConfig::default().with_tolerance(1e-11, 1e-16);
        let zero = vec![vec![0.0; 60]; 3];
        let r = duhamel_residual(&bundle, &[0.0, 1.0, 2.0], &zero).unwrap();
        assert_eq!(r.max_full_residual, 0.0);
        let tail = make_polynomial_tail(4.0, SignPattern::Alternating, 2e-2, TailWeight::Relative, &eq.q, &[1.0]).unwrap();
        let mut last = f64::INFINITY;
        let mut ratio = 1.0;
        for n in [40, 80, 160, 320] {
            let t: Vec<f64> = (0..=n).map(|j| 4.0 * j as f64 / n as f64).collect();
            let hs = h_trajectory(&m, &eq, &tail.perturbation.h, &t, &cfg).unwrap();
            let r = duhamel_residual(&bundle, &t, &hs).unwrap();
            assert!(r.max_full_residual <= last, "{} after {last}", r.max_full_residual);
            ratio = r.max_full_residual / r.max_linear_residual;
            last = r.max_full_residual;
        }
        assert!(ratio < 0.05, "{ratio}");
    }
}
