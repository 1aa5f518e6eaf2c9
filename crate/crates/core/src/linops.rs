//! Linearized operator, perturbation operator and the A/B splitting.
//!
//! Every operator here has the weak form
//! `sum_i Q_i (Op h)_i phi_i = sum_k w_k r_k(h) (G phi)_k` with
//! `(G phi)_k = phi_{k+1} - phi_k - phi_1`, `w_k = a_k Q_k Q_1`, and a
//! row-local `r`. That makes all of them tridiagonal plus a dense first row
//! and column, stored as [`ArrowTridiagonal`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::norms::{h_norm, moment_norm};
use crate::analysis::samples::{normalize, random_zero_mass, sample_rng};
use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{CoefficientModel, Equilibrium, MIN_EXPERIMENT_SIZE};
use crate::ode::ArrowTridiagonal;
use crate::scalar::{index_pow, sign, Real};

/// Moment exponents the default splitting index is chosen for.
pub const DEFAULT_KS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

/// Nonzeros of row `k` (zero-based) of `G`.
fn g_row<T: Real>(k: usize) -> Vec<(usize, T)> {
    if k == 0 {
        vec![(0, T::lit(-2.0)), (1, T::one())]
    } else {
        vec![(k + 1, T::one()), (k, -T::one()), (0, -T::one())]
    }
}

/// `D_Q^{-1} G^T W R` for a row-local `R` given row by row.
fn weak_form<T: Real>(q: &[T], w: &[T], rows: impl Fn(usize) -> Vec<(usize, T)>) -> ArrowTridiagonal<T> {
    let n = q.len();
    let mut m = ArrowTridiagonal::zeros(n);
    for k in 0..n - 1 {
        for (j, rc) in rows(k) {
            for (i, gc) in g_row::<T>(k) {
                m.add(i, j, gc * w[k] * rc / q[i]);
            }
        }
    }
    m
}

/// Operators of the linearization about one equilibrium.
#[derive(Debug, Clone)]
pub struct OperatorBundle<T> {
    n: usize,
    z: T,
    q: Vec<T>,
    w: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    n_z: usize,
    ntilde: usize,
    l: ArrowTridiagonal<T>,
    gamma: ArrowTridiagonal<T>,
    a0: ArrowTridiagonal<T>,
    a1: ArrowTridiagonal<T>,
}

impl<T: Real> OperatorBundle<T> {
    /// Assemble `L`, `Gamma` and the splitting at the default `Ntilde`.
    pub fn assemble(model: &CoefficientModel<T>, eq: &Equilibrium<T>) -> Result<Self> {
        let n = model.len();
        if n < MIN_EXPERIMENT_SIZE {
            return Err(Error::Validation(format!("N = {n} below the minimum {MIN_EXPERIMENT_SIZE}")));
        }
        if eq.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: eq.len() });
        }
        if !eq.is_representable() {
            return Err(Error::TruncationTooSmall(format!(
                "Q_N underflows at N = {n}; the perturbation coordinates need every Q_i representable"
            )));
        }
        let q = eq.q.clone();
        let w: Vec<T> = (0..n - 1).map(|k| model.a(k + 1) * q[k] * q[0]).collect();
        let l = weak_form(&q, &w, |k| g_row::<T>(k).into_iter().map(|(j, c)| (j, -c)).collect());
        let gamma = weak_form(&q, &w, |k| vec![(k, T::one())]);
        let n_z = model.default_fragmentation_check(eq.z).n_z;
        let mut bundle = Self {
            n,
            z: eq.z,
            q,
            w,
            a: model.a_seq().to_vec(),
            b: model.b_seq().to_vec(),
            n_z,
            ntilde: 0,
            l,
            gamma,
            a0: ArrowTridiagonal::zeros(n),
            a1: ArrowTridiagonal::zeros(n),
        };
        let ntilde = bundle.default_ntilde(&DEFAULT_KS);
        bundle.set_ntilde(ntilde)?;
        Ok(bundle)
    }

    /// Rebuild the splitting at a user-chosen `Ntilde`.
    pub fn with_ntilde(mut self, ntilde: usize) -> Result<Self> {
        self.set_ntilde(ntilde)?;
        Ok(self)
    }

    fn set_ntilde(&mut self, ntilde: usize) -> Result<()> {
        let lo = (self.n_z + 1).max(2);
        if ntilde < lo || ntilde > self.n - 1 {
            return Err(Error::ContractViolation(format!(
                "Ntilde = {ntilde} outside [{lo}, {}]",
                self.n - 1
            )));
        }
        // Zero-based flux row k carries index k + 1; A acts on k + 1 >= Ntilde.
        let first = ntilde - 1;
        self.a0 = weak_form(&self.q, &self.w, |k| {
            if k >= first {
                vec![(k, T::one()), (k + 1, -T::one())]
            } else if k + 1 == first {
                vec![(k + 1, -T::one())]
            } else {
                Vec::new()
            }
        });
        self.a1 = weak_form(&self.q, &self.w, |k| if k >= first { vec![(k, T::one())] } else { Vec::new() });
        self.ntilde = ntilde;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    /// Flux weights `w_k = a_k Q_k Q_1`, `k = 1..N-1`.
    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn ntilde(&self) -> usize {
        self.ntilde
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn l(&self) -> &ArrowTridiagonal<T> {
        &self.l
    }

    pub fn gamma(&self) -> &ArrowTridiagonal<T> {
        &self.gamma
    }

    pub fn f(&self, g: T) -> ArrowTridiagonal<T> {
        self.l.combine(T::one(), &self.gamma, g)
    }

    pub fn a_of(&self, g: T) -> ArrowTridiagonal<T> {
        self.a0.combine(T::one(), &self.a1, g)
    }

    /// `B(g) = F(g) - A(g)`.
    pub fn b_of(&self, g: T) -> ArrowTridiagonal<T> {
        self.f(g).combine(T::one(), &self.a_of(g), -T::one())
    }

    pub fn apply(op: &ArrowTridiagonal<T>, h: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); h.len()];
        op.matvec(h, &mut out);
        out
    }

    /// `(G h)_k` for `k = 1..N-1`.
    pub fn g_apply(&self, h: &[T]) -> Vec<T> {
        (0..self.n - 1).map(|k| g_row::<T>(k).into_iter().fold(T::zero(), |acc, (j, c)| acc + c * h[j])).collect()
    }

    /// Dense `G`, `(N-1) x N`.
    pub fn g_matrix(&self) -> DMatrix<T> {
        let mut g = DMatrix::zeros(self.n - 1, self.n);
        for k in 0..self.n - 1 {
            for (j, c) in g_row::<T>(k) {
                g[(k, j)] += c;
            }
        }
        g
    }

    /// `max |L - (-D_Q^{-1} G^T W G)| / max |L|`, reassembled from dense factors.
    pub fn factorization_residual(&self) -> T {
        let g = self.g_matrix();
        let mut wg = g.clone();
        for k in 0..self.n - 1 {
            wg.row_mut(k).scale_mut(self.w[k]);
        }
        let mut prod = g.transpose() * wg;
        for i in 0..self.n {
            let qi = self.q[i];
            prod.row_mut(i).scale_mut(-T::one() / qi);
        }
        let l = self.l.to_dense();
        let diff = (&l - &prod).abs().max();
        diff / l.abs().max()
    }

    /// `(<h, L h>_H, sum_k w_k (G h)_k^2)`; the identity says the first is minus the second.
    pub fn dirichlet_form(&self, h: &[T]) -> (T, T) {
        let lh = Self::apply(&self.l, h);
        let quad = h.iter().zip(&lh).zip(&self.q).fold(T::zero(), |acc, ((&x, &y), &q)| acc + q * x * y);
        let gh = self.g_apply(h);
        let dir = gh.iter().zip(&self.w).fold(T::zero(), |acc, (&x, &w)| acc + w * x * x);
        (quad, dir)
    }

    /// `max |D_Q L - (D_Q L)^T| / max |D_Q L|`.
    pub fn symmetry_defect(&self) -> T {
        let mut m = self.l.to_dense();
        for i in 0..self.n {
            let qi = self.q[i];
            m.row_mut(i).scale_mut(qi);
        }
        (&m - m.transpose()).abs().max() / m.abs().max()
    }

    fn symmetrized(&self, op: &ArrowTridiagonal<T>) -> DMatrix<T> {
        let n = self.n;
        let sq: Vec<T> = self.q.iter().map(|q| q.sqrt()).collect();
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in op.entries() {
            m[(i, j)] += v * sq[i] / sq[j];
        }
        (&m + m.transpose()) * T::lit(0.5)
    }

    /// Unit mass direction `(sqrt(Q_i) i)` in symmetrized coordinates.
    fn mass_direction(&self) -> DVector<T> {
        let v = DVector::from_iterator(self.n, self.q.iter().enumerate().map(|(k, q)| q.sqrt() * T::from_index(k + 1)));
        let norm = v.norm();
        v / norm
    }

    /// Householder reflector mapping the mass direction to a multiple of `e_1`.
    fn reflector(&self) -> DVector<T> {
        let m = self.mass_direction();
        let mut u = m.clone();
        let s = if m[0] >= T::zero() { T::one() } else { -T::one() };
        u[0] += s;
        let norm = u.norm();
        u / norm
    }

    /// `P S P` restricted to the zero-mass complement, plus the reflector.
    fn restricted(&self, s: &DMatrix<T>) -> (DMatrix<T>, DVector<T>) {
        let u = self.reflector();
        let two = T::lit(2.0);
        // H S H with H = I - 2 u u^T.
        let su = s * &u;
        let utsu = u.dot(&su);
        let mut hsh = s.clone();
        hsh -= (&su * u.transpose() + &u * su.transpose()) * two;
        hsh += (&u * u.transpose()) * (T::lit(4.0) * utsu);
        let n = self.n;
        (hsh.view((1, 1), (n - 1, n - 1)).into_owned(), u)
    }

    /// Largest eigenvalue of the symmetric part of `op` on the zero-mass subspace.
    fn restricted_max_eigenvalue(&self, op: &ArrowTridiagonal<T>) -> T {
        let (r, _) = self.restricted(&self.symmetrized(op));
        r.symmetric_eigenvalues().iter().fold(-T::max_value().unwrap_or(T::one() / T::eps()), |m, &v| m.max(v))
    }

    /// Eigenvalues and vectors of `D_Q L` restricted, with `D_Q`-symmetric form.
    pub fn spectral_gap(&self) -> Result<SpectralReport> {
        let s = self.symmetrized(&self.l);
        let (r, u) = self.restricted(&s);
        let eig = r.symmetric_eigen();
        let (idx, &top) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .ok_or_else(|| Error::SpectralFailure("empty spectrum".into()))?;
        let y = eig.eigenvectors.column(idx);
        let n = self.n;
        let mut x = DVector::zeros(n);
        x.rows_mut(1, n - 1).copy_from(&y);
        // Undo the reflector.
        let ux = u.dot(&x);
        x -= &u * (T::lit(2.0) * ux);
        let residual = (&s * &x - &x * top).norm();
        let lambda_c = -top;
        let eigvec: Vec<f64> = x.iter().zip(&self.q).map(|(v, q)| (*v / q.sqrt()).as_f64()).collect();
        let report = SpectralReport {
            n,
            lambda_c: lambda_c.as_f64(),
            eigvec,
            residual: residual.as_f64(),
            n_stability: None,
        };
        if !(lambda_c > T::zero()) {
            return Err(Error::SpectralFailure(format!("lambda_c = {lambda_c:e} is not positive")));
        }
        Ok(report)
    }

    /// Gap of the `F(g)` quadratic form on the zero-mass subspace.
    pub fn lambda_h(&self, g: T) -> T {
        -self.restricted_max_eigenvalue(&self.f(g))
    }

    /// Largest `|g|` on each side of zero with `lambda_H(g) > 0`, by doubling then bisection.
    pub fn scan_delta_h(&self) -> DeltaScan {
        let side = |s: T| -> f64 { scan_positive(|g| self.lambda_h(s * T::lit(g)) > T::zero()) };
        let plus = side(T::one());
        let minus = side(-T::one());
        DeltaScan { plus, minus, delta_hat: plus.min(minus) }
    }

    /// Exact supremum of `<sgn h, A(g) h>_{X_{1+k}} / ||h||_{X_{1+k}}` over sign patterns,
    /// index by index; with the index attaining it.
    pub fn dissipativity_margin(&self, g: T, k: T) -> (T, usize) {
        self.margin_from(self.ntilde, g, k)
    }

    fn margin_from(&self, start: usize, g: T, k: T) -> (T, usize) {
        let mut best = (-T::max_value().unwrap_or(T::one() / T::eps()), start);
        for j in start..=self.n {
            let m = self.margin_at(j, g, k);
            if m > best.0 {
                best = (m, j);
            }
        }
        best
    }

    /// Smallest admissible index from which the `g = 0` margin is nonpositive for every `k`.
    pub fn default_ntilde(&self, ks: &[f64]) -> usize {
        let lo = (self.n_z + 1).max(2);
        let tol = T::lit(1e-12);
        let mut ntilde = lo;
        for &k in ks {
            let last_bad = (lo..=self.n).filter(|&j| self.margin_at(j, T::zero(), T::lit(k)) > tol).max();
            if let Some(j) = last_bad {
                ntilde = ntilde.max(j + 1);
            }
        }
        ntilde.min(self.n - 1)
    }

    /// Coefficient of `|h_j|` in the functional, maximized over the signs of
    /// `h_1`, `h_{j-1}`, `h_{j+1}` and divided by `Q_j j^{1+k}` and a term scale.
    fn margin_at(&self, j: usize, g: T, k: T) -> T {
        let n = self.n;
        let wk = |i: usize| index_pow::<T>(i, T::one() + k);
        let signs = [-T::one(), T::zero(), T::one()];
        let wj = wk(j);
        // w_j / Q_j and w_{j-1} / Q_j.
        let up = if j < n { self.w[j - 1] / self.q[j - 1] } else { T::zero() };
        let down = self.w[j - 2] / self.q[j - 1];
        let next_choices: &[T] = if j < n { &signs } else { &signs[1..2] };
        let mut local = -T::max_value().unwrap_or(T::one() / T::eps());
        for &s1 in &signs {
            let prev_choices: &[T] = if j == 2 { std::slice::from_ref(&s1) } else { &signs };
            for &sp in prev_choices {
                for &sn in next_choices {
                    let first = if j < n { (T::one() + g) * up * (wk(j + 1) * sn - wj - s1) } else { T::zero() };
                    let second = down * (wj - wk(j - 1) * sp - s1);
                    local = local.max((first - second) / wj);
                }
            }
        }
        let scale = (T::one() + g.abs()) * up * (wk((j + 1).min(n)) / wj + T::one()) + down * T::lit(2.0);
        local / scale.max(T::tiny())
    }

    /// Largest `|g|` on each side with a nonpositive exact margin in `X_{1+k}`.
    pub fn scan_delta_k(&self, k: T) -> DeltaScan {
        let tol = T::lit(1e-12);
        let side = |s: T| -> f64 { scan_positive(|g| self.dissipativity_margin(s * T::lit(g), k).0 <= tol) };
        let plus = side(T::one());
        let minus = side(-T::one());
        DeltaScan { plus, minus, delta_hat: plus.min(minus) }
    }

    /// Sampled check of `<sgn h, A(g) h>_{X_{1+k}} <= 1e-12 scale`.
    pub fn dissipativity_check(&self, g: T, k: T, samples: usize, seed: u64) -> Result<DissipativityReport> {
        let a = self.a_of(g);
        let results: Vec<(T, T, Vec<T>)> = (0..samples as u64)
            .into_par_iter()
            .map(|idx| {
                let mut rng = sample_rng(seed, idx);
                let h = random_zero_mass(&mut rng, &self.q);
                let v = Self::apply(&a, &h);
                let (value, scale) = sign_functional_with_scale(&h, &v, &self.q, k);
                (value, scale, h)
            })
            .collect();
        let mut report = DissipativityReport {
            g: g.as_f64(),
            k: k.as_f64(),
            ntilde: self.ntilde,
            samples,
            max_ratio: f64::NEG_INFINITY,
            passed: true,
        };
        let mut witness: Option<(T, T, Vec<T>)> = None;
        for (value, scale, h) in results {
            let ratio = if scale > T::zero() { (value / scale).as_f64() } else { 0.0 };
            report.max_ratio = report.max_ratio.max(ratio);
            if value > T::lit(1e-12) * scale && witness.is_none() {
                witness = Some((value, scale, h));
            }
        }
        if let Some((value, scale, h)) = witness {
            return Err(Error::DissipativityFailure {
                value: value.as_f64(),
                threshold: (T::lit(1e-12) * scale).as_f64(),
                witness: h.iter().map(|x| x.as_f64()).collect(),
            });
        }
        Ok(report)
    }

    /// Largest sampled `||Gamma h||_{X_{1+m}} / ||h||_{X_{2+m}}`.
    pub fn gamma_bound_estimate(&self, m: T, samples: usize, seed: u64) -> f64 {
        (0..samples as u64)
            .into_par_iter()
            .map(|idx| {
                let h = random_zero_mass(&mut sample_rng(seed, idx), &self.q);
                let gh = Self::apply(&self.gamma, &h);
                (moment_norm(&gh, &self.q, m) / moment_norm(&h, &self.q, m + T::one())).as_f64()
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Largest sampled `||B(g) h||_H` over unit `X_1` zero-mass `h`.
    pub fn b_norm_estimate(&self, g: T, samples: usize, seed: u64) -> f64 {
        let b = self.b_of(g);
        (0..samples as u64)
            .into_par_iter()
            .map(|idx| {
                let mut h = random_zero_mass(&mut sample_rng(seed, idx), &self.q);
                normalize(&mut h, &self.q, T::one());
                h_norm(&Self::apply(&b, &h), &self.q).as_f64()
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// `Q_1`.
    pub fn z(&self) -> T {
        self.z
    }

    pub fn a_seq(&self) -> &[T] {
        &self.a
    }

    pub fn b_seq(&self) -> &[T] {
        &self.b
    }
}

/// Doubling from `1e-3` up to `1e3`, then bisection, on a predicate true near zero.
fn scan_positive(ok: impl Fn(f64) -> bool) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return f64::INFINITY;
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    lo
}

/// `sum_i Q_i i^{1+k} v_i sgn(h_i)` with `sgn(0) = 0`.
pub fn sign_functional<T: Real>(h: &[T], v: &[T], q: &[T], k: T) -> T {
    sign_functional_with_scale(h, v, q, k).0
}

fn sign_functional_with_scale<T: Real>(h: &[T], v: &[T], q: &[T], k: T) -> (T, T) {
    h.iter().zip(v).zip(q).enumerate().fold((T::zero(), T::zero()), |(acc, scale), (idx, ((&x, &y), &qi))| {
        let term = qi * index_pow(idx + 1, T::one() + k) * y;
        (acc + term * sign(x), scale + term.abs())
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub n: usize,
    pub lambda_c: f64,
    /// Eigenvector in `h` coordinates.
    pub eigvec: Vec<f64>,
    /// `||S v - lambda v||_2` for the unit symmetrized eigenvector.
    pub residual: f64,
    /// `|lambda_c(N) - lambda_c(N/2)| / lambda_c(N)` when computed.
    pub n_stability: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaScan {
    pub plus: f64,
    pub minus: f64,
    pub delta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub g: f64,
    pub k: f64,
    pub ntilde: usize,
    pub samples: usize,
    /// Largest sampled functional divided by its term scale.
    pub max_ratio: f64,
    pub passed: bool,
}

/// Right-hand side in `h` coordinates, pushed through `c = Q (1 + h)`.
pub fn h_rhs<T: Real>(model: &CoefficientModel<T>, eq: &Equilibrium<T>, h: &[T]) -> Result<Vec<T>> {
    let c: Vec<T> = h.iter().zip(&eq.q).map(|(&x, &q)| q * (T::one() + x)).collect();
    let dc = dynamics::rhs(model, &c)?;
    Ok(dc.iter().zip(&eq.q).map(|(&d, &q)| d / q).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub step: f64,
    /// Largest row-relative error over rows `1..N-2`.
    pub max_rel_error: f64,
    pub worst_row: usize,
    /// Same measure on the two boundary rows, reported separately.
    pub boundary_rel_error: f64,
}

/// Central-difference Jacobian of [`h_rhs`] at `h = 0` against `L`.
pub fn jacobian_consistency<T: Real>(
    model: &CoefficientModel<T>,
    eq: &Equilibrium<T>,
    bundle: &OperatorBundle<T>,
    step: T,
) -> Result<ConsistencyReport> {
    if !(step >= T::lit(1e-8) && step <= T::lit(1e-4)) {
        return Err(Error::Validation(format!("finite-difference step {step:e} outside [1e-8, 1e-4]")));
    }
    let n = bundle.len();
    let columns: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut hp = vec![T::zero(); n];
            let mut hm = vec![T::zero(); n];
            hp[j] = step;
            hm[j] = -step;
            let fp = h_rhs(model, eq, &hp)?;
            let fm = h_rhs(model, eq, &hm)?;
            Ok(fp.iter().zip(&fm).map(|(&a, &b)| (a - b) / (T::lit(2.0) * step)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let l = bundle.l().to_dense();
    let row_error = |i: usize| -> T {
        let scale = (0..n).fold(T::zero(), |m, j| m.max(l[(i, j)].abs()));
        let err = (0..n).fold(T::zero(), |m, j| m.max((columns[j][i] - l[(i, j)]).abs()));
        err / scale
    };
    let mut report = ConsistencyReport { step: step.as_f64(), max_rel_error: 0.0, worst_row: 1, boundary_rel_error: 0.0 };
    for i in 0..n {
        let e = row_error(i).as_f64();
        if i < n - 2 {
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_row = i + 1;
            }
        } else {
            report.boundary_rel_error = report.boundary_rel_error.max(e);
        }
    }
    if report.max_rel_error > 1e-4 {
        return Err(Error::ConsistencyFailure { max_rel_error: report.max_rel_error, row: report.worst_row });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::norms::mass_moment;
    use crate::model::detailed_balance;

    fn penrose(n: usize) -> (CoefficientModel<f64>, Equilibrium<f64>) {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.5, 1.0, 2.0, n).unwrap();
        let eq = Equilibrium::at_fraction(&m, 0.5).unwrap();
        (m, eq)
    }

    /// Unit coefficients with every `Q_i = 1`: `L = -G^T G` by hand.
    fn unit_bundle(n: usize) -> OperatorBundle<f64> {
        let m = CoefficientModel::<f64>::custom(vec![1.0; n], vec![1.0; n], n).unwrap();
        let db = detailed_balance(&m);
        let eq = Equilibrium {
            qtilde: db,
            z_s: 1.0,
            z: 1.0,
            q: vec![1.0; n],
            ln_q: vec![0.0; n],
            rho: 0.0,
            tail_bound: 0.0,
        };
        let w = vec![1.0; n - 1];
        let q = eq.q.clone();
        let l = weak_form(&q, &w, |k| g_row::<f64>(k).into_iter().map(|(j, c)| (j, -c)).collect());
        let gamma = weak_form(&q, &w, |k| vec![(k, 1.0)]);
        OperatorBundle {
            n,
            z: 1.0,
            q,
            w,
            a: vec![1.0; n],
            b: vec![1.0; n],
            n_z: 1,
            ntilde: 2,
            l,
            gamma,
            a0: ArrowTridiagonal::zeros(n),
            a1: ArrowTridiagonal::zeros(n),
        }
    }

    #[test]
    fn three_cluster_hand_matrix() {
        let b = unit_bundle(3);
        // G = [[-2, 1, 0], [-1, -1, 1]]; -G^T G by hand:
        let expected = [[-5.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -1.0]];
        let l = b.l().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert!((l[(i, j)] - expected[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
        // Q Gamma h = G^T W (1, 1) for h = 1: (-3, 0, 1).
        let gh = OperatorBundle::apply(b.gamma(), &[1.0, 1.0, 1.0]);
        assert_eq!(gh, vec![-3.0, 0.0, 1.0]);
    }

    #[test]
    fn factorization_and_symmetry() {
        let (m, eq) = penrose(60);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        assert!(b.factorization_residual() < 1e-14);
        assert!(b.symmetry_defect() < 1e-13);
    }

    #[test]
    fn mass_vector_is_in_the_kernel() {
        let (m, eq) = penrose(80);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let i: Vec<f64> = (1..=80).map(|k| k as f64).collect();
        let li = OperatorBundle::apply(b.l(), &i);
        let scale = b.l().max_abs() * 80.0;
        assert!(li.iter().all(|v| v.abs() <= 1e-13 * scale));
    }

    #[test]
    fn operators_preserve_zero_mass() {
        let (m, eq) = penrose(40);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let h: Vec<f64> = (1..=40).map(|k| (k as f64).sin()).collect();
        for op in [b.l().clone(), b.gamma().clone(), b.a_of(0.3), b.b_of(-0.2)] {
            let v = OperatorBundle::apply(&op, &h);
            let scale: f64 = v.iter().zip(&eq.q).enumerate().map(|(k, (x, q))| q * (k + 1) as f64 * x.abs()).sum();
            assert!(mass_moment(&v, &eq.q).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn splitting_recovers_l_and_f() {
        let (m, eq) = penrose(50);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let sum = b.a_of(0.0).combine(1.0, &b.b_of(0.0), 1.0).to_dense();
        assert!((sum - b.l().to_dense()).abs().max() <= 1e-14 * b.l().max_abs());
        let f = b.f(0.7).to_dense();
        let direct = b.l().to_dense() + b.gamma().to_dense() * 0.7;
        assert_eq!(f, direct);
    }

    #[test]
    fn a_rows_below_the_split_vanish() {
        let (m, eq) = penrose(40);
        let b = OperatorBundle::assemble(&m, &eq).unwrap().with_ntilde(10).unwrap();
        let a = b.a_of(0.2).to_dense();
        for i in 1..8 {
            assert!(a.row(i).iter().all(|&v| v == 0.0), "row {}", i + 1);
        }
        assert!(a.row(8).iter().any(|&v| v != 0.0));
        assert!(a.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn ntilde_out_of_range_is_rejected() {
        let (m, eq) = penrose(20);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        assert!(matches!(b.clone().with_ntilde(1), Err(Error::ContractViolation(_))));
        assert!(matches!(b.with_ntilde(20), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn jacobian_matches_l() {
        let (m, eq) = penrose(60);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let r = jacobian_consistency(&m, &eq, &b, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        assert!(h_rhs(&m, &eq, &vec![0.0; 60]).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_structure_of_h_rhs() {
        let (m, eq) = penrose(30);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let eps = 1e-3;
        let mut h = vec![0.0; 30];
        h[0] = eps;
        let f = h_rhs(&m, &eq, &h).unwrap();
        let mut e1 = vec![0.0; 30];
        e1[0] = 1.0;
        let le = OperatorBundle::apply(b.l(), &e1);
        let ge = OperatorBundle::apply(b.gamma(), &e1);
        for i in 0..30 {
            let predicted = le[i] + eps * ge[i];
            assert!((f[i] / eps - predicted).abs() <= 1e-8 * (1.0 + predicted.abs()), "row {i}");
        }
    }

    #[test]
    fn sign_functional_conventions() {
        let q = [0.5f64, 0.25, 0.125];
        let h = [1.0, 2.0, 3.0];
        let norm = moment_norm(&h, &q, 1.0);
        assert!((sign_functional(&h, &h, &q, 1.0) - norm).abs() < 1e-15);
        let neg: Vec<f64> = h.iter().map(|x| -x).collect();
        assert!((sign_functional(&h, &neg, &q, 1.0) + norm).abs() < 1e-15);
        assert_eq!(sign_functional(&[0.0; 3], &h, &q, 2.0), 0.0);
    }

    #[test]
    fn single_index_functional_hand_value() {
        let (m, eq) = penrose(40);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let j = b.ntilde() + 3;
        let mut h = vec![0.0; 40];
        h[j - 1] = 1.0;
        let k = 1.0;
        let v = OperatorBundle::apply(&b.a_of(0.0), &h);
        let f = sign_functional(&h, &v, &eq.q, k);
        let w = |i: usize| (i as f64).powf(1.0 + k);
        let (qj, a, bj) = (eq.q(j), m.a(j), m.b(j));
        let expected = qj * (a * eq.z * (w(j + 1) - w(j)) + bj * (w(j - 1) - w(j)))
            - qj * (a * eq.z * w(j + 1) + bj * w(j - 1));
        assert!((f - expected).abs() <= 1e-12 * expected.abs(), "{f} vs {expected}");
        assert!(f < 0.0);
    }

    #[test]
    fn margin_bounds_sampled_functional() {
        let (m, eq) = penrose(40);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        for k in [0.0, 1.0, 3.0] {
            let (margin, _) = b.dissipativity_margin(0.0, k);
            assert!(margin <= 1e-12, "k = {k}: {margin}");
            b.dissipativity_check(0.0, k, 500, 3).unwrap();
        }
    }

    #[test]
    fn spectral_gap_positive_with_small_residual() {
        let (m, eq) = penrose(60);
        let b = OperatorBundle::assemble(&m, &eq).unwrap();
        let r = b.spectral_gap().unwrap();
        assert!(r.lambda_c > 0.0);
        assert!(r.residual < 1e-10);
        // The eigenvector lies in the zero-mass subspace.
        let ev = &r.eigvec;
        let scale: f64 = ev.iter().zip(&eq.q).enumerate().map(|(k, (x, q))| q * (k + 1) as f64 * x.abs()).sum();
        assert!(mass_moment(ev, &eq.q).abs() <= 1e-10 * scale);
        // Rayleigh quotient agrees.
        let (quad, _) = b.dirichlet_form(ev);
        let hh = crate::analysis::norms::h_inner(ev, ev, &eq.q);
        assert!((quad / hh + r.lambda_c).abs() < 1e-8 * r.lambda_c);
        assert!((b.lambda_h(0.0) - r.lambda_c).abs() < 1e-10);
    }
}
