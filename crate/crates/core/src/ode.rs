//! Adaptive time stepping for the kinetic systems.
//!
//! Two methods share one driver: an embedded Dormand-Prince 5(4) pair and a
//! first-order implicit Euler step with damped Newton iterations. The implicit
//! solve exploits the shape of every Jacobian in this crate: tridiagonal on
//! sizes `2..N` plus a dense first row and first column (the monomer couples
//! to everything).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExplicitAdaptive,
    ImplicitEuler,
}

/// Step-size control shared by both methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl<T> {
    pub method: Method,
    pub rtol: T,
    pub atol: T,
    pub dt_init: T,
    pub dt_max: T,
    /// Below this step the integration is abandoned.
    pub dt_min: T,
}

impl<T: Real> StepControl<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > T::zero() && self.atol > T::zero()) {
            return Err(Error::Validation("rtol and atol must be positive".into()));
        }
        if !(self.dt_init > T::zero() && self.dt_init <= self.dt_max) {
            return Err(Error::Validation("need 0 < dt_init <= dt_max".into()));
        }
        Ok(())
    }
}

/// Result of screening a candidate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    /// Accepted, with the number of entries clamped to zero.
    Accept { clamped: usize },
    /// The candidate leaves the admissible set by more than rounding.
    Reject,
}

/// Matrix that is tridiagonal on indices `1..n` (zero-based) with a dense
/// first row and first column.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowTridiagonal<T> {
    n: usize,
    /// `M[0][j]` for every `j`.
    row0: Vec<T>,
    /// `M[i][0]` for every `i` (entry 0 unused, see `row0`).
    col0: Vec<T>,
    /// `M[i][i-1]` for `i >= 2`.
    sub: Vec<T>,
    /// `M[i][i]` for `i >= 1`.
    diag: Vec<T>,
    /// `M[i][i+1]` for `i >= 1`.
    sup: Vec<T>,
}

impl<T: Real> ArrowTridiagonal<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row0: vec![T::zero(); n],
            col0: vec![T::zero(); n],
            sub: vec![T::zero(); n],
            diag: vec![T::zero(); n],
            sup: vec![T::zero(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Accumulate `value` into entry `(i, j)`; panics outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, value: T) {
        if i == 0 {
            self.row0[j] += value;
        } else if j == 0 {
            self.col0[i] += value;
        } else if j == i {
            self.diag[i] += value;
        } else if j + 1 == i {
            self.sub[i] += value;
        } else if j == i + 1 {
            self.sup[i] += value;
        } else {
            panic!("entry ({i}, {j}) outside the arrow-tridiagonal pattern");
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i == 0 {
            self.row0[j]
        } else if j == 0 {
            self.col0[i]
        } else if j == i {
            self.diag[i]
        } else if j + 1 == i {
            self.sub[i]
        } else if j == i + 1 {
            self.sup[i]
        } else {
            T::zero()
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: T, other: &Self, beta: T) -> Self {
        assert_eq!(self.n, other.n);
        let mix = |x: &[T], y: &[T]| x.iter().zip(y).map(|(&p, &q)| alpha * p + beta * q).collect();
        Self {
            n: self.n,
            row0: mix(&self.row0, &other.row0),
            col0: mix(&self.col0, &other.col0),
            sub: mix(&self.sub, &other.sub),
            diag: mix(&self.diag, &other.diag),
            sup: mix(&self.sup, &other.sup),
        }
    }

    /// Every structurally nonzero position as `(i, j, value)`.
    pub fn entries(&self) -> Vec<(usize, usize, T)> {
        let n = self.n;
        let mut out: Vec<(usize, usize, T)> = (0..n).map(|j| (0, j, self.row0[j])).collect();
        for i in 1..n {
            out.push((i, 0, self.col0[i]));
            if i >= 2 {
                out.push((i, i - 1, self.sub[i]));
            }
            out.push((i, i, self.diag[i]));
            if i + 1 < n {
                out.push((i, i + 1, self.sup[i]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<T> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.entries().into_iter().fold(T::zero(), |m, (_, _, v)| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        let n = self.n;
        out[0] = self.row0.iter().zip(x).fold(T::zero(), |acc, (&m, &v)| acc + m * v);
        for i in 1..n {
            let mut s = self.col0[i] * x[0] + self.diag[i] * x[i];
            if i >= 2 {
                s += self.sub[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    /// Solve `(I - gamma M) x = r` by a Schur complement on the first index.
    pub fn solve_shifted(&self, gamma: T, r: &[T]) -> Option<Vec<T>> {
        let n = self.n;
        if n == 1 {
            let alpha = T::one() - gamma * self.row0[0];
            return (alpha != T::zero()).then(|| vec![r[0] / alpha]);
        }
        // Tridiagonal block on indices 1..n.
        let m = n - 1;
        let lower: Vec<T> = (0..m).map(|k| if k == 0 { T::zero() } else { -gamma * self.sub[k + 1] }).collect();
        let diag: Vec<T> = (0..m).map(|k| T::one() - gamma * self.diag[k + 1]).collect();
        let upper: Vec<T> =
            (0..m).map(|k| if k + 1 < m { -gamma * self.sup[k + 1] } else { T::zero() }).collect();
        let rest = &r[1..];
        let v: Vec<T> = (1..n).map(|i| -gamma * self.col0[i]).collect();
        let y1 = thomas(&lower, &diag, &upper, rest)?;
        let y2 = thomas(&lower, &diag, &upper, &v)?;
        let alpha = T::one() - gamma * self.row0[0];
        let (mut u_y1, mut u_y2) = (T::zero(), T::zero());
        for k in 0..m {
            let u = -gamma * self.row0[k + 1];
            u_y1 += u * y1[k];
            u_y2 += u * y2[k];
        }
        let denom = alpha - u_y2;
        if denom == T::zero() || !denom.is_finite() {
            return None;
        }
        let x0 = (r[0] - u_y1) / denom;
        let mut x = Vec::with_capacity(n);
        x.push(x0);
        x.extend(y1.iter().zip(&y2).map(|(&a, &b)| a - x0 * b));
        Some(x)
    }
}

/// Thomas algorithm; `lower[0]` and `upper[m-1]` are ignored.
fn thomas<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Option<Vec<T>> {
    let m = diag.len();
    let mut c = vec![T::zero(); m];
    let mut d = vec![T::zero(); m];
    let mut denom = diag[0];
    if denom == T::zero() {
        return None;
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for k in 1..m {
        denom = diag[k] - lower[k] * c[k - 1];
        if denom == T::zero() {
            return None;
        }
        c[k] = upper[k] / denom;
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / denom;
    }
    for k in (0..m - 1).rev() {
        d[k] = d[k] - c[k] * d[k + 1];
    }
    Some(d)
}

/// Autonomous ODE `y' = f(y)` with optional structure hints.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;

    fn rhs(&self, y: &[T], dy: &mut [T]);

    /// Explicit stability cap for the step at state `y`.
    fn max_stable_step(&self, _y: &[T]) -> Option<T> {
        None
    }

    /// Jacobian in arrow-tridiagonal form, required by the implicit method.
    fn jacobian(&self, _y: &[T]) -> Option<ArrowTridiagonal<T>> {
        None
    }

    /// Screen (and possibly clamp) a candidate state.
    fn admit(&self, _y: &mut [T]) -> Admission {
        Admission::Accept { clamped: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub newton_iterations: usize,
    pub clamped_entries: usize,
    pub negativity_rejections: usize,
}

// Dormand-Prince 5(4) tableau; the systems are autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn error_norm<T: Real>(err: &[T], y0: &[T], y1: &[T], rtol: T, atol: T) -> T {
    let n = err.len();
    let sum = err.iter().zip(y0.iter().zip(y1)).fold(T::zero(), |acc, (&e, (&a, &b))| {
        let scale = atol + rtol * a.abs().max(b.abs());
        let r = e / scale;
        acc + r * r
    });
    (sum / T::from_index(n)).sqrt()
}

/// Integrate from `t0` through every checkpoint (sorted, `>= t0`).
///
/// `on_step` sees every accepted step, `on_checkpoint` the state at each
/// checkpoint; steps are shortened to land on checkpoints exactly.
pub fn solve<T, S, F, G>(
    system: &S,
    y0: &[T],
    t0: T,
    checkpoints: &[T],
    control: &StepControl<T>,
    mut on_step: F,
    mut on_checkpoint: G,
) -> Result<SolveStats>
where
    T: Real,
    S: OdeSystem<T>,
    F: FnMut(T, T, &[T]),
    G: FnMut(usize, T, &[T]),
{
    control.validate()?;
    let n = system.dim();
    if y0.len() != n {
        return Err(Error::ContractViolation(format!("state has {} entries, system {n}", y0.len())));
    }
    if checkpoints.windows(2).any(|w| w[1] < w[0]) || checkpoints.first().is_some_and(|&c| c < t0) {
        return Err(Error::Validation("checkpoints must be sorted and not before t0".into()));
    }
    let mut stats = SolveStats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut next = 0usize;
    while next < checkpoints.len() && checkpoints[next] <= t {
        on_checkpoint(next, t, &y);
        next += 1;
    }
    if next == checkpoints.len() {
        return Ok(stats);
    }
    let mut dt = control.dt_init;
    match control.method {
        Method::ExplicitAdaptive => {
            let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
            let mut stage = vec![T::zero(); n];
            let mut y_new = vec![T::zero(); n];
            let mut err = vec![T::zero(); n];
            system.rhs(&y, &mut k[0]);
            stats.rhs_evals += 1;
            while next < checkpoints.len() {
                let target = checkpoints[next];
                let mut cap = control.dt_max;
                if let Some(s) = system.max_stable_step(&y) {
                    cap = cap.min(s);
                }
                dt = dt.min(cap);
                let remaining = target - t;
                let landing = dt >= remaining;
                let h = if landing { remaining } else { dt };
                for s in 1..7 {
                    for i in 0..n {
                        let mut acc = y[i];
                        for (j, kj) in k.iter().enumerate().take(s) {
                            let a = A[s][j];
                            if a != 0.0 {
                                acc += h * T::lit(a) * kj[i];
                            }
                        }
                        stage[i] = acc;
                    }
                    system.rhs(&stage, &mut k[s]);
                    stats.rhs_evals += 1;
                    if s == 6 {
                        y_new.copy_from_slice(&stage);
                    }
                }
                for i in 0..n {
                    let mut e = T::zero();
                    for (j, kj) in k.iter().enumerate() {
                        if E[j] != 0.0 {
                            e += T::lit(E[j]) * kj[i];
                        }
                    }
                    err[i] = h * e;
                }
                let en = error_norm(&err, &y, &y_new, control.rtol, control.atol);
                let admitted = if en <= T::one() && en.is_finite() {
                    system.admit(&mut y_new)
                } else {
                    Admission::Reject
                };
                let factor = if en == T::zero() {
                    T::lit(5.0)
                } else {
                    (T::lit(0.9) * en.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
                };
                match admitted {
                    Admission::Accept { clamped } if en <= T::one() => {
                        stats.accepted += 1;
                        stats.clamped_entries += clamped;
                        t = if landing { target } else { t + h };
                        std::mem::swap(&mut y, &mut y_new);
                        if clamped > 0 {
                            system.rhs(&y, &mut k[0]);
                            stats.rhs_evals += 1;
                        } else {
                            let last = k[6].clone();
                            k[0] = last;
                        }
                        on_step(t, h, &y);
                        while next < checkpoints.len() && checkpoints[next] <= t {
                            on_checkpoint(next, t, &y);
                            next += 1;
                        }
                        // A shortened landing step says nothing about the next step size.
                        if !landing || h >= dt {
                            dt = h * factor;
                        }
                    }
                    other => {
                        stats.rejected += 1;
                        if other == Admission::Reject && en <= T::one() {
                            stats.negativity_rejections += 1;
                            dt = h * T::lit(0.25);
                        } else {
                            dt = h * factor.min(T::one());
                        }
                        if dt < control.dt_min || !dt.is_finite() {
                            return Err(failure(t, dt, stats.negativity_rejections > 0 && en <= T::one()));
                        }
                    }
                }
            }
        }
        Method::ImplicitEuler => {
            let mut f0 = vec![T::zero(); n];
            let mut f1 = vec![T::zero(); n];
            system.rhs(&y, &mut f0);
            stats.rhs_evals += 1;
            while next < checkpoints.len() {
                let target = checkpoints[next];
                dt = dt.min(control.dt_max);
                let remaining = target - t;
                let landing = dt >= remaining;
                let h = if landing { remaining } else { dt };
                let outcome = implicit_euler_step(system, &y, &f0, h, control, &mut stats)?;
                let (mut y_new, converged) = outcome;
                let mut en = T::lit(f64::INFINITY);
                if converged {
                    system.rhs(&y_new, &mut f1);
                    stats.rhs_evals += 1;
                    // Local error of the first-order step: (h/2) |f(y1) - f(y0)|.
                    let err: Vec<T> =
                        f1.iter().zip(&f0).map(|(&a, &b)| (a - b) * h * T::lit(0.5)).collect();
                    en = error_norm(&err, &y, &y_new, control.rtol, control.atol);
                }
                let admitted = if converged && en <= T::one() {
                    system.admit(&mut y_new)
                } else {
                    Admission::Reject
                };
                let factor = if en == T::zero() {
                    T::lit(4.0)
                } else if en.is_finite() {
                    (T::lit(0.9) * en.powf(T::lit(-0.5))).min(T::lit(4.0)).max(T::lit(0.2))
                } else {
                    T::lit(0.25)
                };
                match admitted {
                    Admission::Accept { clamped } => {
                        stats.accepted += 1;
                        stats.clamped_entries += clamped;
                        t = if landing { target } else { t + h };
                        y = y_new;
                        if clamped > 0 {
                            system.rhs(&y, &mut f0);
                            stats.rhs_evals += 1;
                        } else {
                            std::mem::swap(&mut f0, &mut f1);
                        }
                        on_step(t, h, &y);
                        while next < checkpoints.len() && checkpoints[next] <= t {
                            on_checkpoint(next, t, &y);
                            next += 1;
                        }
                        if !landing || h >= dt {
                            dt = h * factor;
                        }
                    }
                    Admission::Reject => {
                        stats.rejected += 1;
                        let negativity = converged && en <= T::one();
                        if negativity {
                            stats.negativity_rejections += 1;
                        }
                        dt = h * factor.min(T::lit(0.5));
                        if dt < control.dt_min || !dt.is_finite() {
                            return Err(failure(t, dt, negativity));
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}

fn failure<T: Real>(t: T, dt: T, negativity: bool) -> Error {
    if negativity {
        Error::IntegrationFailure {
            t: t.as_f64(),
            reason: "state left the nonnegative cone beyond the clamp threshold".into(),
        }
    } else {
        Error::StiffnessFailure { t: t.as_f64(), dt: dt.as_f64() }
    }
}

/// One backward Euler step by damped Newton; returns the iterate and whether it converged.
fn implicit_euler_step<T: Real, S: OdeSystem<T>>(
    system: &S,
    y0: &[T],
    f0: &[T],
    h: T,
    control: &StepControl<T>,
    stats: &mut SolveStats,
) -> Result<(Vec<T>, bool)> {
    let n = y0.len();
    let mut y: Vec<T> = y0.iter().zip(f0).map(|(&a, &f)| a + h * f).collect();
    let mut f = vec![T::zero(); n];
    let residual = |y: &[T], f: &mut Vec<T>, stats: &mut SolveStats| -> Vec<T> {
        system.rhs(y, f);
        stats.rhs_evals += 1;
        (0..n).map(|i| y[i] - y0[i] - h * f[i]).collect()
    };
    let scaled = |v: &[T], y: &[T]| -> T {
        let s = v.iter().zip(y.iter().zip(y0)).fold(T::zero(), |acc, (&e, (&a, &b))| {
            let r = e / (control.atol + control.rtol * a.abs().max(b.abs()));
            acc + r * r
        });
        (s / T::from_index(n)).sqrt()
    };
    let mut res = residual(&y, &mut f, stats);
    let mut res_norm = scaled(&res, &y);
    for _ in 0..12 {
        stats.newton_iterations += 1;
        let jac = system
            .jacobian(&y)
            .ok_or_else(|| Error::ContractViolation("implicit method needs a Jacobian".into()))?;
        let neg: Vec<T> = res.iter().map(|&r| -r).collect();
        let Some(delta) = jac.solve_shifted(h, &neg) else {
            return Ok((y, false));
        };
        let mut lambda = T::one();
        let mut improved = false;
        for _ in 0..8 {
            let trial: Vec<T> = y.iter().zip(&delta).map(|(&a, &d)| a + lambda * d).collect();
            let trial_res = residual(&trial, &mut f, stats);
            let trial_norm = scaled(&trial_res, &trial);
            if trial_norm.is_finite() && trial_norm < res_norm.max(T::lit(1e-300)) {
                y = trial;
                res = trial_res;
                res_norm = trial_norm;
                improved = true;
                break;
            }
            lambda *= T::lit(0.5);
        }
        let step_norm = scaled(&delta, &y) * lambda;
        if res_norm <= T::lit(1e-3) || step_norm <= T::lit(1e-6) {
            return Ok((y, true));
        }
        if !improved {
            return Ok((y, false));
        }
    }
    Ok((y, false))
}
