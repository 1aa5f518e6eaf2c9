//! K-functional between `X_1` and `X_eta`, the `h_r` weighted star norm
//! and the scalar inequalities behind the polynomial decay rates.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::analysis::norms::{exp_norm, moment_norm};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpConfig {
    pub eta: f64,
    pub r: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub quad_tol: f64,
}

impl InterpConfig {
    /// `eta = ln(z_s / z) / 2` and a grid wide enough for `N` up to a few thousand.
    pub fn for_equilibrium(z: f64, z_s: f64, r: f64) -> Self {
        Self { eta: 0.5 * (z_s / z).ln(), r, s_min: -60.0, s_max: 60.0, quad_tol: 1e-10 }
    }

    pub fn validate(&self, z: f64, z_s: f64) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Validation(format!("eta = {} must lie in (0, 1)", self.eta)));
        }
        if self.eta >= (z_s / z).ln() {
            return Err(Error::Validation(format!("eta = {} must stay below ln(z_s/z) = {}", self.eta, (z_s / z).ln())));
        }
        if !(self.r > 0.0) || !(self.s_min < 0.0 && self.s_max > 0.0) || !(self.quad_tol > 0.0) {
            return Err(Error::Validation("need r > 0, s_min < 0 < s_max and quad_tol > 0".into()));
        }
        Ok(())
    }
}

/// `min(i, e^{s + eta i})` without overflow.
fn index_cap(i: usize, s: f64, eta: f64) -> f64 {
    let x = s + eta * i as f64;
    let li = (i as f64).ln();
    if x >= li {
        i as f64
    } else {
        x.exp()
    }
}

/// `sum_i Q_i |u_i| min(i, e^{s + eta i})`.
pub fn k_lower<T: Real>(s: f64, u: &[T], eta: f64, q: &[T]) -> f64 {
    u.iter()
        .zip(q)
        .enumerate()
        .map(|(k, (&x, &qi))| (qi * x.abs()).as_f64() * index_cap(k + 1, s, eta))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KValue {
    /// Optimal value from the dual.
    pub value: f64,
    /// Objective of the recovered minimizer `v`.
    pub primal: f64,
    pub v: Vec<f64>,
    /// Duality gap within `1e-10` relative plus rounding at the scale of `||u||_{X_1}`.
    pub converged: bool,
}

/// Objective `||u - v||_{X_1} + e^s ||v||_{X_eta}` in the scaled variables.
fn k_objective(s: f64, eta: f64, uu: &[f64], vv: &[f64]) -> f64 {
    uu.iter()
        .zip(vv)
        .enumerate()
        .map(|(k, (&u, &v))| {
            let i = (k + 1) as f64;
            (u - v).abs() + (s + eta * i).exp() / i * v.abs()
        })
        .sum()
}

/// Infimum of `||u - v||_{X_1} + e^s ||v||_{X_eta}` over zero-mass `v` of the
/// same length, for zero-mass `u`.
///
/// With `U_i = Q_i i u_i` and `c_i = e^{s + eta i} / i` the problem is the
/// linear program `min sum |U_i - V_i| + c_i |V_i|` subject to `sum V_i = 0`.
/// Its dual `max_lambda sum_i min(|U_i|, c_i |U_i| - lambda U_i)` over
/// `|lambda| <= 1 + min c_i` is a concave piecewise-linear function of one
/// variable, maximized exactly over its breakpoints.
pub fn k_exact<T: Real>(s: f64, u: &[T], eta: f64, q: &[T]) -> KValue {
    let n = u.len();
    let uu: Vec<f64> = u.iter().zip(q).enumerate().map(|(k, (&x, &qi))| (qi * x).as_f64() * (k + 1) as f64).collect();
    let c: Vec<f64> = (1..=n).map(|i| (s + eta * i as f64).exp() / i as f64).collect();
    let c_min = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let dual = |p: Cand| -> f64 {
        uu.iter()
            .zip(&c)
            .filter(|(u, _)| **u != 0.0)
            .map(|(&ui, &ci)| ui.abs() * p.offset(ci, ui.signum()).value().min(1.0))
            .sum()
    };
    let mut cands: Vec<Cand> = uu
        .iter()
        .zip(&c)
        .filter(|(u, ci)| **u != 0.0 && **ci - 1.0 < 1.0 + c_min)
        .map(|(&ui, &ci)| Cand { sigma: ui.signum(), base: ci, edge: false })
        .collect();
    cands.push(Cand { sigma: -1.0, base: c_min, edge: true });
    cands.push(Cand { sigma: 1.0, base: c_min, edge: true });
    // Every candidate is evaluated: equal breakpoints from indices sharing
    // `c_i` produce ties away from the maximum, which defeat a bisection.
    let mut scored: Vec<(Cand, f64)> = cands.iter().map(|&p| (p, dual(p))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let value = scored[0].1;
    let scale: f64 = uu.iter().map(|u| u.abs()).sum();
    // Near the optimum the dual can be flat to rounding, so the primal is
    // recovered at every candidate within rounding of the best value.
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut fallback: Option<(f64, Vec<f64>)> = None;
    for &(p, _) in scored.iter().take_while(|(_, g)| *g >= value - 1e-14 * scale).take(64) {
        let vv = recover_primal(&uu, &c, p);
        let imbalance = vv.iter().sum::<f64>().abs();
        let primal = k_objective(s, eta, &uu, &vv);
        if imbalance <= 1e-13 * scale {
            if best.as_ref().map_or(true, |(b, _)| primal < *b) {
                best = Some((primal, vv));
            }
        } else if fallback.as_ref().map_or(true, |(b, _)| imbalance < *b) {
            fallback = Some((imbalance, vv));
        }
    }
    let (feasible, vv) = match (best, fallback) {
        (Some((_, vv)), _) => (true, vv),
        (None, Some((_, vv))) => (false, vv),
        (None, None) => (false, vec![0.0; n]),
    };
    let primal = k_objective(s, eta, &uu, &vv);
    let v: Vec<f64> = vv.iter().zip(q).enumerate().map(|(k, (&x, &qi))| x / (qi.as_f64() * (k + 1) as f64)).collect();
    let converged = feasible && (primal - value).abs() <= 1e-10 * value + 1e-13 * scale;
    KValue { value, primal, v, converged }
}

/// A dual point `lambda = sigma (base - 1)`, or `sigma (1 + base)` on the edge
/// of the domain, kept symbolic so that `c_i - lambda sgn(U_i)` is formed
/// without cancellation.
#[derive(Debug, Clone, Copy)]
struct Cand {
    sigma: f64,
    base: f64,
    edge: bool,
}

/// `part + whole` with `whole` an integer, compared against zero relative to its terms.
#[derive(Debug, Clone, Copy)]
struct Split {
    part: f64,
    whole: f64,
    scale: f64,
}

impl Split {
    fn value(self) -> f64 {
        self.part + self.whole
    }

    fn shift(self, by: f64) -> Self {
        Self { whole: self.whole + by, scale: self.scale + by.abs(), ..self }
    }

    fn sign(self) -> i8 {
        let v = self.value();
        if v.abs() <= 8.0 * f64::EPSILON * (self.scale + self.whole.abs()) {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    }
}

impl Cand {
    /// `c - lambda * su`.
    fn offset(self, c: f64, su: f64) -> Split {
        let same = su == self.sigma;
        let (part, whole) = match (self.edge, same) {
            (false, true) => (c - self.base, 1.0),
            (false, false) => (c + self.base, -1.0),
            (true, true) => (c - self.base, -1.0),
            (true, false) => (c + self.base, 1.0),
        };
        Split { part, whole, scale: c + self.base }
    }
}

/// Minimizer of the Lagrangian at `p`, with ties filled to restore `sum V = 0`.
fn recover_primal(uu: &[f64], c: &[f64], p: Cand) -> Vec<f64> {
    let n = uu.len();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for k in 0..n {
        let (u, ci) = (uu[k], c[k]);
        let su = if u >= 0.0 { 1.0 } else { -1.0 };
        // Slopes in the direction of U: inside (0, U), beyond U, and below 0.
        let inner = p.offset(ci, su).shift(-1.0).sign();
        let outer = p.offset(ci, su).shift(1.0).sign();
        let below = p.offset(ci, -su).shift(1.0).sign();
        let (mut a, mut b) = if u == 0.0 || inner > 0 {
            (0.0, 0.0)
        } else if inner < 0 {
            (u, u)
        } else {
            (0.0_f64.min(u), 0.0_f64.max(u))
        };
        // Flat rays at the edge of the dual domain.
        if u == 0.0 {
            if p.offset(ci, 1.0).shift(1.0).sign() == 0 {
                b = f64::INFINITY;
            }
            if p.offset(ci, -1.0).shift(1.0).sign() == 0 {
                a = f64::NEG_INFINITY;
            }
        } else {
            let at_u = a == u || b == u;
            let at_zero = a == 0.0 || b == 0.0;
            if outer == 0 && at_u {
                if su > 0.0 {
                    b = f64::INFINITY;
                } else {
                    a = f64::NEG_INFINITY;
                }
            }
            if below == 0 && at_zero {
                if su > 0.0 {
                    a = f64::NEG_INFINITY;
                } else {
                    b = f64::INFINITY;
                }
            }
        }
        lo[k] = a;
        hi[k] = b;
    }
    // Start every index at its lower end and move up toward the needed sum.
    let mut v: Vec<f64> = (0..n).map(|k| if lo[k].is_finite() { lo[k] } else { hi[k].min(0.0) }).collect();
    let mut deficit = -v.iter().sum::<f64>();
    for k in 0..n {
        if deficit == 0.0 {
            break;
        }
        let room = if deficit > 0.0 { hi[k] - v[k] } else { lo[k] - v[k] };
        let step = if deficit > 0.0 { deficit.min(room) } else { deficit.max(room) };
        if step.is_finite() && step != 0.0 {
            v[k] += step;
            deficit -= step;
        }
    }
    v
}

/// The explicit competitor `v_s(u)`: keep `u` below `j(s)`, move the
/// remaining mass to index `j(s)`, drop the rest.
pub fn paper_candidate<T: Real>(s: f64, u: &[T], eta: f64, q: &[T]) -> (Vec<f64>, f64) {
    let n = u.len();
    let uu: Vec<f64> = u.iter().zip(q).enumerate().map(|(k, (&x, &qi))| (qi * x).as_f64() * (k + 1) as f64).collect();
    let s_eta = -1.0 - eta.ln();
    let vv: Vec<f64> = if s >= s_eta {
        vec![0.0; n]
    } else {
        let j = upper_root(s, eta).ceil() as usize;
        if j > n {
            uu.clone()
        } else {
            let tail: f64 = uu[j - 1..].iter().sum();
            (0..n).map(|k| if k + 1 < j { uu[k] } else if k + 1 == j { tail } else { 0.0 }).collect()
        }
    };
    let value = k_objective(s, eta, &uu, &vv);
    let v = vv.iter().zip(q).enumerate().map(|(k, (&x, &qi))| x / (qi.as_f64() * (k + 1) as f64)).collect();
    (v, value)
}

/// Larger root of `e^{s + eta x} = x` for `s < -1 - ln eta`.
fn upper_root(s: f64, eta: f64) -> f64 {
    let f = |x: f64| x - (s + eta * x).exp();
    let mut lo = (-eta.ln() - s) / eta;
    let mut hi = 2.0 * lo + 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `max{2 + e^eta, 1/eta}`.
pub fn sandwich_constant(eta: f64) -> f64 {
    (2.0 + eta.exp()).max(1.0 / eta)
}

/// `h_r(s)`: `e^{-s}` for `s >= 0`, `(1 - s)^{r-1}` for `s <= 0`.
pub fn h_weight(r: f64, s: f64) -> f64 {
    if s >= 0.0 {
        (-s).exp()
    } else {
        (1.0 - s).powf(r - 1.0)
    }
}

/// `H_r(t) = int_t^inf h_r`.
pub fn h_tail(r: f64, t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp()
    } else {
        1.0 + ((1.0 - t).powf(r) - 1.0) / r
    }
}

/// `Gamma(a, x)` (upper incomplete) in log form, robust to underflow.
fn ln_upper_gamma(a: f64, x: f64) -> f64 {
    let reg = gamma_ur(a, x);
    if reg > 1e-290 {
        reg.ln() + ln_gamma(a)
    } else {
        // Leading asymptotics x^{a-1} e^{-x} (1 + (a-1)/x).
        (a - 1.0) * x.ln() - x + (1.0 + (a - 1.0) / x).max(1e-300).ln()
    }
}

/// `int min(i, e^{s + eta i}) h_r(s) ds` in closed form.
pub fn index_integral(i: usize, eta: f64, r: f64) -> f64 {
    let fi = i as f64;
    let ei = eta * fi;
    let s_star = fi.ln() - ei;
    let right = if s_star >= 0.0 { ei.exp() * (s_star + 1.0) } else { fi };
    let m = s_star.min(0.0);
    let mut left = (ei + 1.0 + ln_upper_gamma(r, 1.0 - m)).exp();
    if s_star < 0.0 {
        left += fi * ((1.0 - s_star).powf(r) - 1.0) / r;
    }
    right + left
}

/// `(C_-, C_+)`: extreme values of `index_integral(i) / (1 + i)^{1+r}` over `i <= n`.
pub fn index_bounds(n: usize, eta: f64, r: f64) -> (f64, f64) {
    (1..=n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let v = index_integral(i, eta, r) / (1.0 + i as f64).powf(1.0 + r);
        (lo.min(v), hi.max(v))
    })
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Which K evaluation the star norm integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    Lower,
    Exact,
}

/// `int K(s, u) h_r(s) ds` by adaptive quadrature on `[s_min, s_max]` with
/// breakpoints at the kinks, plus an analytic bound on the two tails.
pub fn star_norm<T: Real>(u: &[T], q: &[T], config: &InterpConfig, mode: KMode) -> Result<f64> {
    let (eta, r) = (config.eta, config.r);
    let x1 = moment_norm(u, q, T::zero()).as_f64();
    if x1 == 0.0 {
        return Ok(0.0);
    }
    let k = |s: f64| match mode {
        KMode::Lower => k_lower(s, u, eta, q),
        KMode::Exact => k_exact(s, u, eta, q).value,
    };
    let integrand = |s: f64| k(s) * h_weight(r, s);
    let mut breaks: Vec<f64> = (1..=u.len())
        .filter(|&i| u[i - 1] != T::zero())
        .map(|i| (i as f64).ln() - eta * i as f64)
        .filter(|&s| s > config.s_min && s < config.s_max)
        .collect();
    breaks.extend([config.s_min, 0.0, config.s_max]);
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let peak = x1;
    let tol = config.quad_tol * peak;
    let per = tol / breaks.len() as f64;
    let body: f64 = breaks.windows(2).map(|w| adaptive_simpson(&integrand, w[0], w[1], per)).sum();
    let xeta = exp_norm(u, q, T::lit(eta)).as_f64();
    let right_tail = x1 * (-config.s_max).exp();
    let left_tail = xeta * (1.0 + ln_upper_gamma(r, 1.0 - config.s_min)).exp();
    let tail = right_tail + left_tail;
    if tail > config.quad_tol * body {
        return Err(Error::WidenGrid { tail, tol: config.quad_tol * body });
    }
    Ok(body)
}

/// [`star_norm`], doubling the `s` range up to `max_doublings` times while
/// the tail bound is too large. Returns the value and the range used.
pub fn star_norm_widening<T: Real>(
    u: &[T],
    q: &[T],
    config: &InterpConfig,
    mode: KMode,
    max_doublings: usize,
) -> Result<(f64, InterpConfig)> {
    let mut cfg = *config;
    for _ in 0..max_doublings {
        match star_norm(u, q, &cfg, mode) {
            Err(Error::WidenGrid { .. }) => {
                cfg.s_min *= 2.0;
                cfg.s_max *= 2.0;
            }
            other => return other.map(|v| (v, cfg)),
        }
    }
    star_norm(u, q, &cfg, mode).map(|v| (v, cfg))
}

/// Closed-form `int K_lower(s, u) h_r(s) ds` from the per-index integrals.
pub fn star_norm_closed<T: Real>(u: &[T], q: &[T], eta: f64, r: f64) -> f64 {
    u.iter()
        .zip(q)
        .enumerate()
        .map(|(k, (&x, &qi))| (qi * x.abs()).as_f64() * index_integral(k + 1, eta, r))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftBound {
    pub m: f64,
    pub k: f64,
    /// `sup H_m(s+t) / (H_k(s) (1+t)^{m-k})` on the grid.
    pub sup_ratio: f64,
    pub argmax_s: f64,
    pub argmax_t: f64,
    /// Same sup on a grid refined twice in each direction.
    pub refined_sup_ratio: f64,
    pub relative_change: f64,
}

fn shift_sup(m: f64, k: f64, s_grid: &[f64], t_grid: &[f64]) -> (f64, f64, f64) {
    let mut best = (0.0f64, 0.0, 0.0);
    for &s in s_grid {
        let hk = h_tail(k, s);
        for &t in t_grid {
            let v = h_tail(m, s + t) / (hk * (1.0 + t).powf(m - k));
            if v > best.0 {
                best = (v, s, t);
            }
        }
    }
    best
}

fn refine(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(grid.last());
    out
}

/// Grid estimate of the constant in `H_m(s + t) <= C H_k(s) (1 + t)^{m-k}`.
pub fn hr_shift_bound(m: f64, k: f64, t_grid: &[f64], s_grid: &[f64]) -> Result<ShiftBound> {
    if !(m > 0.0 && m < k) {
        return Err(Error::Validation(format!("need 0 < m < k, got m = {m}, k = {k}")));
    }
    let (sup, s, t) = shift_sup(m, k, s_grid, t_grid);
    let (fine, _, _) = shift_sup(m, k, &refine(s_grid), &refine(t_grid));
    Ok(ShiftBound {
        m,
        k,
        sup_ratio: sup,
        argmax_s: s,
        argmax_t: t,
        refined_sup_ratio: fine,
        relative_change: (fine - sup).abs() / sup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionPoint {
    pub r: f64,
    pub t: f64,
    pub integral: f64,
    pub bound: f64,
    /// `bound / integral`, infinite at `t = 0`.
    pub margin: f64,
}

/// `int_0^t (1+t-s)^{-r} (1+s)^{-r} ds` against `2^{r+1}/(r-1) (1+t)^{-r}`.
pub fn gronwall_convolution_check(r: f64, t_grid: &[f64]) -> Result<Vec<ConvolutionPoint>> {
    if !(r > 1.0) {
        return Err(Error::Validation(format!("need r > 1, got {r}")));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let f = move |s: f64| (1.0 + t - s).powf(-r) * (1.0 + s).powf(-r);
        // The integrand is symmetric about t/2.
        let integral = 2.0 * adaptive_simpson(&f, 0.0, 0.5 * t, 1e-14);
        let bound = 2f64.powf(r + 1.0) / (r - 1.0) * (1.0 + t).powf(-r);
        let point = ConvolutionPoint { r, t, integral, bound, margin: bound / integral };
        if integral > bound {
            return Err(Error::BoundFailure(format!("convolution {integral:e} exceeds {bound:e} at t = {t}, r = {r}")));
        }
        out.push(point);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::samples::{random_zero_mass, sample_rng};

    fn geometric(n: usize, ratio: f64) -> Vec<f64> {
        (1..=n).map(|i| ratio.powi(i as i32)).collect()
    }

    #[test]
    fn k_lower_single_entry_and_zero() {
        let q = geometric(10, 0.5);
        let mut u = vec![0.0; 10];
        u[0] = 1.0;
        for s in [-5.0, 0.0, 3.0] {
            assert!((k_lower(s, &u, 0.3, &q) - 0.5 * (1f64).min((s + 0.3f64).exp())).abs() < 1e-15);
        }
        assert_eq!(k_lower(1.0, &[0.0; 10], 0.3, &q), 0.0);
    }

    #[test]
    fn k_lower_saturates_above_threshold() {
        let q = geometric(20, 0.5);
        let u: Vec<f64> = (0..20).map(|k| (k as f64).cos()).collect();
        let eta = 0.3f64;
        let s = -1.0 - eta.ln() + 1e-9;
        assert!((k_lower(s, &u, eta, &q) - moment_norm(&u, &q, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn k_exact_sandwich_and_certificate() {
        let q = geometric(40, 0.6);
        let eta = 0.25;
        let c = sandwich_constant(eta);
        for idx in 0..50 {
            let u = random_zero_mass(&mut sample_rng(11, idx), &q);
            for s in [-20.0, -5.0, -1.0, 0.0, 2.0, 10.0] {
                let lower = k_lower(s, &u, eta, &q);
                let exact = k_exact(s, &u, eta, &q);
                let slack = 1e-12 * exact.value + 1e-14 * moment_norm(&u, &q, 0.0);
                assert!(exact.converged, "gap {} vs {}", exact.primal, exact.value);
                assert!(lower <= exact.value + slack, "s = {s}");
                assert!(exact.value <= c * lower + slack, "s = {s}");
                let (_, cand) = paper_candidate(s, &u, eta, &q);
                assert!(exact.value <= cand + slack, "s = {s}: {} vs {cand}", exact.value);
                let mass: f64 = exact.v.iter().zip(&q).enumerate().map(|(k, (v, q))| q * (k + 1) as f64 * v).sum();
                assert!(mass.abs() <= 1e-10 * moment_norm(&u, &q, 0.0));
            }
        }
    }

    #[test]
    fn k_exact_limits() {
        let q = geometric(30, 0.5);
        let u = random_zero_mass(&mut sample_rng(5, 1), &q);
        let x1 = moment_norm(&u, &q, 0.0);
        assert!((k_exact(50.0, &u, 0.3, &q).value - x1).abs() <= 1e-12 * x1);
        let small = k_exact(-20.0, &u, 0.3, &q).value;
        let xeta = exp_norm(&u, &q, 0.3);
        assert!((small - (-20f64).exp() * xeta).abs() <= 1e-6 * small);
    }

    #[test]
    fn closed_form_index_integral_matches_quadrature() {
        for &(eta, r) in &[(0.35, 1.0), (0.35, 2.0), (0.2, 3.0)] {
            for i in [1usize, 10, 100] {
                let f = |s: f64| index_cap(i, s, eta) * h_weight(r, s);
                let kink = (i as f64).ln() - eta * i as f64;
                let mut pts = vec![-400.0, 0.0, 60.0, kink];
                pts.sort_by(|a, b| a.total_cmp(b));
                let quad: f64 = pts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-12)).sum();
                let closed = index_integral(i, eta, r);
                assert!((quad - closed).abs() <= 1e-7 * closed, "i = {i}, r = {r}: {quad} vs {closed}");
            }
        }
    }

    #[test]
    fn star_norm_quadrature_matches_closed_form() {
        let q = geometric(40, 0.5);
        let cfg = InterpConfig { eta: 0.3, r: 2.0, s_min: -60.0, s_max: 60.0, quad_tol: 1e-10 };
        let u = random_zero_mass(&mut sample_rng(2, 3), &q);
        let quad = star_norm(&u, &q, &cfg, KMode::Lower).unwrap();
        let closed = star_norm_closed(&u, &q, 0.3, 2.0);
        assert!((quad - closed).abs() <= 1e-8 * closed, "{quad} vs {closed}");
        assert_eq!(star_norm(&[0.0; 40], &q, &cfg, KMode::Lower).unwrap(), 0.0);
        let exact = star_norm(&u, &q, &cfg, KMode::Exact).unwrap();
        assert!(exact >= quad * (1.0 - 1e-8));
    }

    #[test]
    fn narrow_grid_is_reported() {
        let q = geometric(20, 0.5);
        let cfg = InterpConfig { eta: 0.3, r: 2.0, s_min: -2.0, s_max: 2.0, quad_tol: 1e-10 };
        let u = random_zero_mass(&mut sample_rng(2, 4), &q);
        assert!(matches!(star_norm(&u, &q, &cfg, KMode::Lower), Err(Error::WidenGrid { .. })));
    }

    #[test]
    fn h_tail_closed_form() {
        for r in [1.0, 2.0, 3.5] {
            for t in [-10.0, -1.0, 0.0, 0.5, 4.0] {
                let quad = adaptive_simpson(&|s| h_weight(r, s), t, 0.0_f64.max(t), 1e-13)
                    + adaptive_simpson(&|s| h_weight(r, s), 0.0_f64.max(t), 80.0, 1e-13);
                assert!((quad - h_tail(r, t)).abs() < 1e-9, "r = {r}, t = {t}");
            }
        }
    }

    #[test]
    fn shift_bound_is_grid_stable() {
        let s: Vec<f64> = (0..=200).map(|k| -50.0 + 0.5 * k as f64).collect();
        let t: Vec<f64> = (0..=200).map(|k| 0.5 * k as f64).collect();
        let b = hr_shift_bound(1.0, 3.0, &t, &s).unwrap();
        assert!(b.sup_ratio.is_finite());
        assert!(b.relative_change < 0.01, "{b:?}");
        let at_zero = hr_shift_bound(1.0, 3.0, &[0.0], &s).unwrap();
        assert!(at_zero.sup_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn convolution_matches_closed_form_for_r_two() {
        let exact = |t: f64| {
            (1.0 / (2.0 + t).powi(2)) * (2.0 * (1.0 - 1.0 / (1.0 + t)) + 4.0 / (2.0 + t) * (1.0 + t).ln())
        };
        let pts = gronwall_convolution_check(2.0, &[0.0, 1.0, 10.0, 100.0]).unwrap();
        assert_eq!(pts[0].integral, 0.0);
        for p in &pts[1..] {
            assert!((p.integral - exact(p.t)).abs() <= 1e-10 * exact(p.t), "t = {}", p.t);
        }
        assert!((pts[1].integral - 0.2138).abs() < 1e-4);
        assert!(gronwall_convolution_check(1.0, &[1.0]).is_err());
    }
}
