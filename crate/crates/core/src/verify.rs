//! Acceptance battery: twelve numerical checks with fixed thresholds.
//!
//! The full suite runs every check at its reference size, including the
//! comparisons across truncations. The fast suite shrinks the sizes and
//! skips the cross-truncation comparisons.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::experiments::{
    duhamel_residual, h_trajectory, linear_decay_experiment, nonlinear_decay_experiment, DecayReport, StabilityPoint,
};
use crate::analysis::fit::log_grid;
use crate::analysis::norms::{concentration_distance, moment_norm};
use crate::analysis::perturbation::{make_polynomial_tail, remove_mass_moment, SignPattern, TailWeight};
use crate::analysis::samples::{random_zero_mass, sample_rng};
use crate::dynamics::{integrate, mass, IntegratorConfig};
use crate::error::{Error, Result};
use crate::interp::{
    gronwall_convolution_check, index_bounds, k_exact, k_lower, sandwich_constant, star_norm_closed, star_norm_widening,
    InterpConfig, KMode,
};
use crate::linops::{h_rhs, jacobian_consistency, OperatorBundle};
use crate::model::{detailed_balance, mass_of_z, solve_z, CoefficientModel, Equilibrium};

const SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fast,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(Error::Validation(format!("unknown suite {other:?}; expected fast or full"))),
        }
    }
}

/// One measured quantity and the bound it is held to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measure {
    pub label: String,
    pub observed: String,
    pub bound: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measures: Vec<Measure>,
    pub elapsed_s: f64,
    pub limit_s: f64,
    pub error: Option<String>,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{:02}] {}:", self.id, self.name)?;
        for m in &self.measures {
            let mark = if m.ok { "" } else { " (!)" };
            write!(f, " {} = {} vs {}{mark};", m.label, m.observed, m.bound)?;
        }
        if let Some(e) = &self.error {
            write!(f, " error: {e};")?;
        }
        write!(f, " runtime {:.2} s < {} s", self.elapsed_s, self.limit_s)
    }
}

struct Check {
    measures: Vec<Measure>,
}

impl Check {
    fn new() -> Self {
        Self { measures: Vec::new() }
    }

    fn le(&mut self, label: impl Into<String>, observed: f64, bound: f64) {
        self.measures.push(Measure {
            label: label.into(),
            observed: format!("{observed:.3e}"),
            bound: format!("<= {bound:.1e}"),
            ok: observed <= bound,
        });
    }

    fn gt(&mut self, label: impl Into<String>, observed: f64, bound: f64) {
        self.measures.push(Measure {
            label: label.into(),
            observed: format!("{observed:.6e}"),
            bound: format!("> {bound:.1e}"),
            ok: observed > bound,
        });
    }

    fn within(&mut self, label: impl Into<String>, observed: f64, lo: f64, hi: f64) {
        self.measures.push(Measure {
            label: label.into(),
            observed: format!("{observed:.4}"),
            bound: format!("in [{lo}, {hi}]"),
            ok: observed >= lo && observed <= hi,
        });
    }

    fn holds(&mut self, label: impl Into<String>, observed: impl Into<String>, bound: impl Into<String>, ok: bool) {
        self.measures.push(Measure { label: label.into(), observed: observed.into(), bound: bound.into(), ok });
    }
}

fn run_check(id: u8, name: &'static str, limit_s: f64, body: impl FnOnce(&mut Check) -> Result<()>) -> CheckOutcome {
    let start = Instant::now();
    let mut check = Check::new();
    let error = body(&mut check).err().map(|e| e.to_string());
    let elapsed_s = start.elapsed().as_secs_f64();
    let passed = error.is_none() && !check.measures.is_empty() && check.measures.iter().all(|m| m.ok) && elapsed_s < limit_s;
    CheckOutcome { id, name, passed, measures: check.measures, elapsed_s, limit_s, error }
}

fn penrose(alpha: f64, mu: f64, q: f64, n: usize) -> Result<CoefficientModel<f64>> {
    CoefficientModel::penrose(alpha, mu, q, 2.0, n)
}

fn reference(n: usize) -> Result<(CoefficientModel<f64>, Equilibrium<f64>)> {
    let m = penrose(0.5, 0.5, 1.0, n)?;
    let eq = Equilibrium::at_fraction(&m, 0.5)?;
    Ok((m, eq))
}

pub const NAMES: [&str; 12] = [
    "detailed balance",
    "equilibrium round trip",
    "conservation and entropy",
    "Dirichlet-form identity",
    "spectral gap",
    "Jacobian consistency",
    "dissipativity",
    "K-functional sandwich",
    "Gronwall convolution",
    "linear decay domination",
    "nonlinear decay domination",
    "Duhamel residual",
];

/// Run one check by number, 1 to 12.
pub fn run_criterion(id: u8, suite: Suite) -> Result<CheckOutcome> {
    let full = suite == Suite::Full;
    let name = *NAMES.get(usize::from(id).wrapping_sub(1)).ok_or_else(|| Error::Validation(format!("no check numbered {id}")))?;
    Ok(match id {
        1 => run_check(id, name, 1.0, detailed_balance_check),
        2 => run_check(id, name, 1.0, round_trip_check),
        3 => run_check(id, name, 30.0, |c| conservation_check(c, full)),
        4 => run_check(id, name, 5.0, |c| dirichlet_check(c, if full { 500 } else { 200 })),
        5 => run_check(id, name, 60.0, |c| spectral_check(c, full)),
        6 => run_check(id, name, 10.0, jacobian_check),
        7 => run_check(id, name, 30.0, |c| dissipativity_check(c, if full { 10_000 } else { 2_000 })),
        8 => run_check(id, name, 60.0, |c| sandwich_check(c, if full { 100 } else { 25 })),
        9 => run_check(id, name, 1.0, convolution_check),
        10 => run_check(id, name, 120.0, |c| linear_decay_check(c, full)),
        11 => run_check(id, name, 300.0, |c| nonlinear_decay_check(c, full)),
        12 => run_check(id, name, 60.0, duhamel_check),
        _ => unreachable!(),
    })
}

pub fn run_suite(suite: Suite) -> Vec<CheckOutcome> {
    (1..=12).map(|id| run_criterion(id, suite).expect("ids 1..=12 exist")).collect()
}

fn detailed_balance_check(c: &mut Check) -> Result<()> {
    for (alpha, mu, q) in [(1.0, 1.0, 1.0), (0.5, 0.0, 1.0)] {
        let m = penrose(alpha, mu, q, 1000)?;
        let db = detailed_balance(&m);
        c.le(format!("residual({alpha},{mu},{q})"), db.residual(&m), 1e-14);
    }
    Ok(())
}

fn round_trip_check(c: &mut Check) -> Result<()> {
    let m = penrose(0.5, 0.5, 1.0, 1000)?;
    let db = detailed_balance(&m);
    let z_s = m.critical_z().value;
    let (rho_s, _) = mass_of_z(&m, &db, z_s * (1.0 - 1e-9))?;
    for f in [0.25, 0.5, 0.75] {
        let rho = f * rho_s;
        let eq = solve_z(&m, &db, rho, 1e-10)?;
        let (back, _) = mass_of_z(&m, &db, eq.z)?;
        c.le(format!("rel_err@{f}"), (back - rho).abs() / rho, 1e-9);
    }
    Ok(())
}

fn conservation_check(c: &mut Check, full: bool) -> Result<()> {
    let n = if full { 300 } else { 150 };
    let (m, eq) = reference(n)?;
    let rho = eq.rho;
    let mut c0 = vec![0.0; n];
    c0[0] = rho;
    let fine = IntegratorConfig::default().with_tolerance(1e-9, 1e-15);
    let coarse = IntegratorConfig::default().with_tolerance(1e-6, 1e-12);
    let a = integrate(&m, &eq.qtilde, &c0, &[100.0], &fine)?;
    let b = integrate(&m, &eq.qtilde, &c0, &[100.0], &coarse)?;
    c.le("mass_drift", a.mass_drift(rho).max(b.mass_drift(rho)), 1e-9);
    let scale = a.steps.iter().fold(0.0f64, |s, r| s.max(r.entropy.abs()));
    c.le("entropy_increase/|V|", a.max_entropy_increase().max(b.max_entropy_increase()) / scale, 1e-12);
    let (ca, cb) = (a.last().unwrap_or(&c0), b.last().unwrap_or(&c0));
    c.le("X1_change/rho", concentration_distance(ca, cb) / mass(ca), 1e-5);
    Ok(())
}

fn dirichlet_check(c: &mut Check, n: usize) -> Result<()> {
    let (m, eq) = reference(n)?;
    let bundle = OperatorBundle::assemble(&m, &eq)?;
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|idx| {
            let h = random_zero_mass(&mut sample_rng(SEED, idx), &eq.q);
            let (quad, dir) = bundle.dirichlet_form(&h);
            if quad == 0.0 {
                0.0
            } else {
                (quad + dir).abs() / quad.abs()
            }
        })
        .reduce(|| 0.0, f64::max);
    c.le("max |<h,Lh> + D(h)| / |<h,Lh>|", worst, 1e-12);
    Ok(())
}

fn spectral_check(c: &mut Check, full: bool) -> Result<()> {
    let (small, large) = if full { (400, 800) } else { (200, 400) };
    let (m, eq) = reference(large)?;
    let big = OperatorBundle::assemble(&m, &eq)?.spectral_gap()?;
    c.gt(format!("lambda_c(N={large})"), big.lambda_c, 0.0);
    if full {
        let (m, eq) = reference(small)?;
        let lo = OperatorBundle::assemble(&m, &eq)?.spectral_gap()?;
        c.le(format!("|lambda_c({large}) - lambda_c({small})| / lambda_c"), (big.lambda_c - lo.lambda_c).abs() / big.lambda_c, 0.01);
    }
    let (m, eq) = reference(small)?;
    let bundle = OperatorBundle::assemble(&m, &eq)?;
    let scan = bundle.scan_delta_h();
    c.gt("delta_hat_H", scan.delta_hat, 0.0);
    for g in [-0.5 * scan.delta_hat, 0.5 * scan.delta_hat] {
        c.gt(format!("lambda_H({g:.4})"), bundle.lambda_h(g), 0.0);
    }
    Ok(())
}

fn jacobian_check(c: &mut Check) -> Result<()> {
    let (m, eq) = reference(200)?;
    let bundle = OperatorBundle::assemble(&m, &eq)?;
    let report = jacobian_consistency(&m, &eq, &bundle, 1e-6)?;
    c.le("FD rel error rows 1..N-2", report.max_rel_error, 1e-5);
    // F(g) against the matrix sum, and F(h_1) h against the kinetic right-hand side.
    let mut identity = 0.0f64;
    let mut rhs_gap = 0.0f64;
    for idx in 0..20u64 {
        let mut rng = sample_rng(SEED, idx);
        let mut h: Vec<f64> = (0..200).map(|_| rng.random_range(-0.5..0.5)).collect();
        remove_mass_moment(&mut h, &eq.q);
        let g = h[0];
        let f = bundle.f(g).to_dense();
        let sum = bundle.l().to_dense() + bundle.gamma().to_dense() * g;
        identity = identity.max((&f - &sum).abs().max());
        let fh = OperatorBundle::apply(&bundle.f(g), &h);
        let direct = h_rhs(&m, &eq, &h)?;
        let row_scale: Vec<f64> = (0..200).map(|i| (0..200).map(|j| (f[(i, j)] * h[j]).abs()).sum::<f64>()).collect();
        for i in 0..200 {
            if row_scale[i] > 0.0 {
                rhs_gap = rhs_gap.max((fh[i] - direct[i]).abs() / row_scale[i]);
            }
        }
    }
    c.le("max |F(g) - L - g Gamma|", identity, 0.0);
    c.le("max |F(h1) h - h'| / row scale", rhs_gap, 1e-12);
    Ok(())
}

fn dissipativity_check(c: &mut Check, samples: usize) -> Result<()> {
    let (m, eq) = reference(200)?;
    let bundle = OperatorBundle::assemble(&m, &eq)?;
    let base = bundle.dissipativity_check(0.0, 0.0, samples, SEED)?;
    c.le("A(0) in X_1: max ratio", base.max_ratio, 1e-12);
    for k in [0.0, 1.0, 2.0, 3.0] {
        let delta = bundle.scan_delta_k(k).delta_hat;
        let mut worst = f64::NEG_INFINITY;
        for g in [-0.5 * delta, 0.5 * delta] {
            worst = worst.max(bundle.dissipativity_check(g, k, samples, SEED + 1)?.max_ratio);
        }
        c.le(format!("A(|g| = {:.3}) in X_{}: max ratio", 0.5 * delta, 1.0 + k), worst, 1e-12);
    }
    Ok(())
}

fn sandwich_check(c: &mut Check, samples: u64) -> Result<()> {
    let (_, eq) = reference(200)?;
    let q = &eq.q;
    let base = InterpConfig::for_equilibrium(eq.z, eq.z_s, 1.0);
    base.validate(eq.z, eq.z_s)?;
    let eta = base.eta;
    let cst = sandwich_constant(eta);
    let s_grid: Vec<f64> = (-30..=30).map(f64::from).collect();
    let (lower_gap, upper_gap, unconverged) = (0..samples)
        .into_par_iter()
        .map(|idx| {
            let u = random_zero_mass(&mut sample_rng(SEED, idx), q);
            let x1 = moment_norm(&u, q, 0.0);
            let mut acc = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize);
            for &s in &s_grid {
                let lo = k_lower(s, &u, eta, q);
                let ex = k_exact(s, &u, eta, q);
                let slack = 1e-12 * ex.value + 1e-14 * x1;
                acc.0 = acc.0.max((lo - ex.value - slack) / x1);
                acc.1 = acc.1.max((ex.value - cst * lo - slack) / x1);
                acc.2 += usize::from(!ex.converged);
            }
            acc
        })
        .reduce(|| (f64::NEG_INFINITY, f64::NEG_INFINITY, 0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2 + b.2));
    c.le("max (K_lower - K_exact) / X1", lower_gap, 0.0);
    c.le(format!("max (K_exact - {cst:.3} K_lower) / X1"), upper_gap, 0.0);
    c.le("unconverged K_exact", unconverged as f64, 0.0);
    for r in [1.0, 2.0, 3.0] {
        let cfg = InterpConfig { r, ..base };
        let (c_lo, c_hi) = index_bounds(q.len(), eta, r);
        let hi = 2f64.powf(1.0 + r) * c_hi;
        let results: Vec<Result<(f64, f64)>> = (0..samples)
            .into_par_iter()
            .map(|idx| {
                let u = random_zero_mass(&mut sample_rng(SEED, idx), q);
                let star = star_norm_widening(&u, q, &cfg, KMode::Lower, 4)?.0;
                let closed = star_norm_closed(&u, q, eta, r);
                Ok((star / moment_norm(&u, q, r), (star - closed).abs() / closed))
            })
            .collect();
        let mut lo_ratio = f64::INFINITY;
        let mut hi_ratio = 0.0f64;
        let mut quad = 0.0f64;
        for res in results {
            let (ratio, err) = res?;
            lo_ratio = lo_ratio.min(ratio);
            hi_ratio = hi_ratio.max(ratio);
            quad = quad.max(err);
        }
        c.holds(
            format!("star/X_{} (r={r})", 1.0 + r),
            format!("[{lo_ratio:.4}, {hi_ratio:.4}]"),
            format!("within [{c_lo:.4}, {hi:.4}]"),
            lo_ratio >= c_lo && hi_ratio <= hi,
        );
        c.le(format!("quadrature vs closed form (r={r})"), quad, 1e-6);
    }
    Ok(())
}

fn convolution_check(c: &mut Check) -> Result<()> {
    for r in [2.0, 3.0] {
        let points = gronwall_convolution_check(r, &[1.0, 10.0, 100.0])?;
        let worst = points.iter().map(|p| p.integral / p.bound).fold(0.0, f64::max);
        c.le(format!("max integral / bound (r={r})"), worst, 1.0);
    }
    Ok(())
}

/// Constant-coefficient model `a_i = 1`, `b_i = 2`: bounded attachment rates,
/// where a cluster of size `i` needs a time of order `i` to dissolve.
fn constant_model(n: usize) -> Result<(CoefficientModel<f64>, Equilibrium<f64>)> {
    let m = CoefficientModel::custom(vec![1.0; n], vec![2.0; n], n)?;
    let eq = Equilibrium::at_fraction(&m, 0.5)?;
    Ok((m, eq))
}

fn linear_decay_check(c: &mut Check, full: bool) -> Result<()> {
    let (k, m) = (3.0, 1.0);
    let sizes: &[usize] = if full { &[200, 400, 800] } else { &[200] };
    let t = log_grid(3000.0, 200);
    let cfg = IntegratorConfig::default().with_tolerance(1e-9, 1e-20);
    let reports: Vec<DecayReport> = sizes
        .par_iter()
        .map(|&n| {
            let (model, eq) = constant_model(n)?;
            let tail = make_polynomial_tail(k + 3.5, SignPattern::Positive, 1.0, TailWeight::Concentration, &eq.q, &[k])?;
            linear_decay_experiment(&model, &eq, &tail.perturbation.h, k, m, &t, &cfg, None)
        })
        .collect::<Result<_>>()?;
    for r in &reports {
        c.holds(
            format!("C(N={})", r.n),
            format!("{:.4}", r.domination_constant),
            "finite, > 0",
            r.domination_constant.is_finite() && r.domination_constant > 0.0,
        );
    }
    if full {
        let (first, last) = (&reports[0], &reports[reports.len() - 1]);
        c.le(format!("C({}) / C({})", last.n, first.n), last.domination_constant / first.domination_constant, 2.0);
        let cross: Vec<Option<f64>> = reports.iter().map(|r| r.crossover_time).collect();
        let increasing = cross.iter().all(Option::is_some) && cross.windows(2).all(|w| w[1] > w[0]);
        let shown: Vec<String> = cross.iter().map(|t| t.map_or("none".into(), |t| format!("{t:.1}"))).collect();
        c.holds("crossover times", shown.join(" < "), "strictly increasing in N", increasing);
    }
    Ok(())
}

fn nonlinear_decay_check(c: &mut Check, full: bool) -> Result<()> {
    let (k, m) = (3.5, 1.0);
    let amplitude = 1e-2;
    let t = log_grid(300.0, 120);
    let cfg = IntegratorConfig::default().with_tolerance(1e-9, 1e-20);
    let run = |n: usize, amp: f64| -> Result<(DecayReport, f64)> {
        let (model, eq) = reference(n)?;
        let delta_hat = OperatorBundle::assemble(&model, &eq)?.scan_delta_k(k).delta_hat;
        let tail = make_polynomial_tail(k + 3.5, SignPattern::Positive, amp, TailWeight::Concentration, &eq.q, &[k])?;
        let r = nonlinear_decay_experiment(&model, &eq, &tail.perturbation.h, k, m, &t, &cfg, Some(delta_hat), None)?;
        Ok((r, delta_hat))
    };
    // Smallness scan at reduced amplitudes fixes the stability constants.
    let scan: Vec<StabilityPoint> = [0.5, 0.25]
        .par_iter()
        .map(|f| run(200, f * amplitude).map(|(r, _)| StabilityPoint::from_report(f * amplitude, &r)))
        .collect::<Result<_>>()?;
    let growth_x = scan.iter().map(|p| p.growth).fold(0.0, f64::max);
    let growth_h1 = scan.iter().map(|p| p.sup_h1 / p.delta).fold(0.0, f64::max);
    let sizes: &[usize] = if full { &[200, 800] } else { &[200] };
    let runs: Vec<(DecayReport, f64)> = sizes.par_iter().map(|&n| run(n, amplitude)).collect::<Result<_>>()?;
    for (r, delta_hat) in &runs {
        let p = StabilityPoint::from_report(amplitude, r);
        c.holds(
            format!("C(N={}) window/full", r.n),
            format!("{:.4}/{:.4}", r.domination_constant, r.domination_constant_full),
            "finite, > 0",
            r.domination_constant.is_finite() && r.domination_constant_full.is_finite() && r.domination_constant > 0.0,
        );
        c.le(format!("sup |h1| (N={})", r.n), p.sup_h1, (1.1 * growth_h1 * p.delta).min(*delta_hat));
        c.le(format!("sup X_{} (N={})", 1.0 + k, r.n), p.epsilon, 1.1 * growth_x * p.delta);
        c.holds(format!("smallness (N={})", r.n), r.stability_breach.clone().unwrap_or_else(|| "kept".into()), "kept", r.stability_breach.is_none());
    }
    if full {
        let (a, b) = (&runs[0].0, &runs[1].0);
        c.le(format!("C({}) / C({})", b.n, a.n), b.domination_constant / a.domination_constant, 2.0);
        c.le(format!("C_full({}) / C_full({})", b.n, a.n), b.domination_constant_full / a.domination_constant_full, 2.0);
    }
    Ok(())
}

fn duhamel_check(c: &mut Check) -> Result<()> {
    let (m, eq) = reference(300)?;
    let bundle = OperatorBundle::assemble(&m, &eq)?;
    let t: Vec<f64> = (0..=400).map(|j| 0.025 * f64::from(j)).collect();
    let cfg = IntegratorConfig::default().with_tolerance(1e-12, 1e-22);
    let mut lin = Vec::new();
    for amp in [2e-2, 1e-2] {
        let tail = make_polynomial_tail(4.0, SignPattern::Alternating, amp, TailWeight::Relative, &eq.q, &[1.0])?;
        let hs = h_trajectory(&m, &eq, &tail.perturbation.h, &t, &cfg)?;
        let r = duhamel_residual(&bundle, &t, &hs)?;
        c.le(format!("full relative residual (A={amp})"), r.max_relative_residual, 1e-3);
        lin.push(r.max_linear_residual);
    }
    c.within("residual ratio under halving", lin[0] / lin[1], 3.0, 5.0);
    Ok(())
}
