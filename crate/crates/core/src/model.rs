//! Coefficient families, detailed-balance coefficients and subcritical equilibria.
//!
//! Sizes are one-based in the mathematics and zero-based in storage: entry
//! `v[i - 1]` holds the value for cluster size `i`.
//!
//! The detailed-balance coefficients decay (or grow) geometrically, so at
//! `N = 1000` they leave the range of `f64`. They are kept as a mantissa in
//! `[1, 2)` times an exact power of two, which keeps the recursion accurate to
//! a few ulps per step however far the exponent drifts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest truncation accepted by the experiment layer.
pub const MIN_EXPERIMENT_SIZE: usize = 8;

/// Parameters generating the rate sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientKind<T> {
    /// `a_i = i^alpha`, `b_i = a_i (z_s + q / i^(1 - mu))`.
    Penrose { alpha: T, mu: T, q: T, z_s: T },
    /// Explicit sequences, indexed from size 1.
    Custom { a: Vec<T>, b: Vec<T> },
}

/// Constants of the standing assumptions, measured on the stored range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionDiagnostics<T> {
    /// `min a_i`.
    pub c1: T,
    /// `max max(a_i, b_i) / i`.
    pub c2: T,
}

/// Outcome of checking `a_i (z + delta) <= b_i` for large `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrongFragmentation<T> {
    pub z: T,
    pub delta: T,
    /// Smallest `N_z >= 1` such that the inequality holds for every `N_z < i <= N`.
    pub n_z: usize,
    /// `sup_i a_i (z + delta) - b_i` over the stored range.
    pub sup_excess: T,
    /// False when the inequality fails at the truncation edge itself.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel<T> {
    kind: CoefficientKind<T>,
    n: usize,
    a: Vec<T>,
    b: Vec<T>,
    diagnostics: AssumptionDiagnostics<T>,
}

impl<T: Real> CoefficientModel<T> {
    /// Populate `a_1..a_N`, `b_1..b_N` and check positivity and growth.
    pub fn build(kind: CoefficientKind<T>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel(format!("truncation N = {n} is below 2")));
        }
        let (a, b) = match &kind {
            CoefficientKind::Penrose { alpha, mu, q, z_s } => {
                let (alpha, mu, q, z_s) = (*alpha, *mu, *q, *z_s);
                if !(alpha > T::zero() && alpha <= T::one()) {
                    return Err(Error::InvalidModel(format!("alpha = {alpha} outside (0, 1]")));
                }
                if !(mu >= T::zero() && mu <= T::one()) {
                    return Err(Error::InvalidModel(format!("mu = {mu} outside [0, 1]")));
                }
                if !(q > T::zero()) {
                    return Err(Error::InvalidModel(format!("q = {q} must be positive")));
                }
                if !(z_s > T::zero()) {
                    return Err(Error::InvalidModel(format!("z_s = {z_s} must be positive")));
                }
                let a: Vec<T> = (1..=n).map(|i| T::from_index(i).powf(alpha)).collect();
                let b = a
                    .iter()
                    .enumerate()
                    .map(|(k, &ai)| {
                        let i = T::from_index(k + 1);
                        ai * (z_s + q / i.powf(T::one() - mu))
                    })
                    .collect();
                (a, b)
            }
            CoefficientKind::Custom { a, b } => {
                let shortest = a.len().min(b.len());
                if shortest < n {
                    return Err(Error::LengthMismatch { expected: n, got: shortest });
                }
                (a[..n].to_vec(), b[..n].to_vec())
            }
        };
        for (k, (&ai, &bi)) in a.iter().zip(&b).enumerate() {
            if !(ai > T::zero() && ai.is_finite()) {
                return Err(Error::InvalidModel(format!("a_{} = {ai} is not positive", k + 1)));
            }
            if !(bi > T::zero() && bi.is_finite()) {
                return Err(Error::InvalidModel(format!("b_{} = {bi} is not positive", k + 1)));
            }
        }
        let c1 = a.iter().copied().fold(T::max_value().unwrap_or(T::one()), |m, x| m.min(x));
        let c2 = a
            .iter()
            .zip(&b)
            .enumerate()
            .map(|(k, (&ai, &bi))| ai.max(bi) / T::from_index(k + 1))
            .fold(T::zero(), |m, x| m.max(x));
        Ok(Self { kind, n, a, b, diagnostics: AssumptionDiagnostics { c1, c2 } })
    }

    pub fn penrose(alpha: T, mu: T, q: T, z_s: T, n: usize) -> Result<Self> {
        Self::build(CoefficientKind::Penrose { alpha, mu, q, z_s }, n)
    }

    pub fn custom(a: Vec<T>, b: Vec<T>, n: usize) -> Result<Self> {
        Self::build(CoefficientKind::Custom { a, b }, n)
    }

    pub fn kind(&self) -> &CoefficientKind<T> {
        &self.kind
    }

    /// Truncation size `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `a_i` for one-based `i`.
    #[inline]
    pub fn a(&self, i: usize) -> T {
        self.a[i - 1]
    }

    /// `b_i` for one-based `i`.
    #[inline]
    pub fn b(&self, i: usize) -> T {
        self.b[i - 1]
    }

    pub fn a_seq(&self) -> &[T] {
        &self.a
    }

    pub fn b_seq(&self) -> &[T] {
        &self.b
    }

    pub fn diagnostics(&self) -> AssumptionDiagnostics<T> {
        self.diagnostics
    }

    /// Limit of `b_i / a_i`, the radius of convergence of `sum Qtilde_i z^i`.
    pub fn critical_z(&self) -> CriticalZ<T> {
        match &self.kind {
            CoefficientKind::Penrose { mu, q, z_s, .. } => {
                // b_i / a_i = z_s + q i^(mu - 1); the correction only vanishes for mu < 1.
                let value = if *mu < T::one() { *z_s } else { *z_s + *q };
                CriticalZ { value, convergence_estimate: T::zero(), converged: true }
            }
            CoefficientKind::Custom { .. } => {
                let n = self.n;
                let value = self.b(n) / self.a(n);
                let half = (n / 2).max(1);
                let estimate = (value - self.b(half) / self.a(half)).abs();
                let converged = estimate <= T::lit(0.1) * value;
                if !converged {
                    log::warn!(
                        "b_N/a_N = {value} has not settled (|b_N/a_N - b_N/2/a_N/2| = {estimate})"
                    );
                }
                CriticalZ { value, convergence_estimate: estimate, converged }
            }
        }
    }

    /// Check `a_i (z + delta) <= b_i` beyond some `N_z`.
    pub fn strong_fragmentation(&self, z: T, delta: T) -> StrongFragmentation<T> {
        let mut last_fail = 0usize;
        let mut sup_excess = -T::max_value().unwrap_or(T::one());
        for i in 1..=self.n {
            let excess = self.a(i) * (z + delta) - self.b(i);
            sup_excess = sup_excess.max(excess);
            if excess > T::zero() {
                last_fail = i;
            }
        }
        StrongFragmentation {
            z,
            delta,
            n_z: last_fail.max(1),
            sup_excess,
            holds: last_fail < self.n,
        }
    }

    /// Default margin `delta = (z_s - z) / 2`.
    pub fn default_fragmentation_check(&self, z: T) -> StrongFragmentation<T> {
        let z_s = self.critical_z().value;
        self.strong_fragmentation(z, (z_s - z) * T::lit(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalZ<T> {
    pub value: T,
    /// `|b_N/a_N - b_{N/2}/a_{N/2}|` for custom sequences, zero for closed forms.
    pub convergence_estimate: T,
    pub converged: bool,
}

/// A positive number stored as `mantissa * 2^exponent` with the mantissa in `[1, 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled<T> {
    pub mantissa: T,
    pub exponent: i32,
}

impl<T: Real> Scaled<T> {
    pub fn new(x: T) -> Self {
        Self { mantissa: x, exponent: 0 }.normalized()
    }

    fn normalized(mut self) -> Self {
        let two = T::lit(2.0);
        debug_assert!(self.mantissa > T::zero() && self.mantissa.is_finite());
        // Coarse jumps first so that extreme factors do not loop bit by bit.
        let big = T::lit(2f64.powi(64));
        while self.mantissa >= big {
            self.mantissa /= big;
            self.exponent += 64;
        }
        while self.mantissa < T::one() / big {
            self.mantissa *= big;
            self.exponent -= 64;
        }
        while self.mantissa >= two {
            self.mantissa /= two;
            self.exponent += 1;
        }
        while self.mantissa < T::one() {
            self.mantissa *= two;
            self.exponent -= 1;
        }
        self
    }

    pub fn mul(self, factor: T) -> Self {
        Self { mantissa: self.mantissa * factor, exponent: self.exponent }.normalized()
    }

    /// Plain value; underflows to zero and overflows to infinity like any product would.
    pub fn value(self) -> T {
        let two = T::lit(2.0);
        // Split the exponent so the intermediate power never overflows prematurely.
        let half = self.exponent / 2;
        self.mantissa * two.powi(half) * two.powi(self.exponent - half)
    }

    pub fn ln(self) -> T {
        self.mantissa.ln() + T::lit(std::f64::consts::LN_2 * self.exponent as f64)
    }

    /// `self / other` as a plain number, exact in the exponent.
    pub fn ratio(self, other: Self) -> T {
        Scaled { mantissa: self.mantissa / other.mantissa, exponent: self.exponent - other.exponent }
            .value()
    }
}

/// Detailed-balance coefficients `Qtilde_1 = 1`, `Qtilde_{i+1} = Qtilde_i a_i / b_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailedBalance<T> {
    coeffs: Vec<Scaled<T>>,
}

impl<T: Real> DetailedBalance<T> {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `Qtilde_i` as a plain number (may underflow for large `i`).
    pub fn value(&self, i: usize) -> T {
        self.coeffs[i - 1].value()
    }

    pub fn ln(&self, i: usize) -> T {
        self.coeffs[i - 1].ln()
    }

    pub fn scaled(&self, i: usize) -> Scaled<T> {
        self.coeffs[i - 1]
    }

    pub fn values(&self) -> Vec<T> {
        self.coeffs.iter().map(|c| c.value()).collect()
    }

    /// `max_i |Qtilde_i a_i - Qtilde_{i+1} b_{i+1}| / (Qtilde_i a_i)`.
    pub fn residual(&self, model: &CoefficientModel<T>) -> T {
        (1..self.len())
            .map(|i| {
                let lhs = self.coeffs[i - 1].mul(model.a(i));
                let rhs = self.coeffs[i].mul(model.b(i + 1));
                (rhs.ratio(lhs) - T::one()).abs()
            })
            .fold(T::zero(), |m, r| m.max(r))
    }
}

/// Run the detailed-balance recursion in scaled arithmetic.
pub fn detailed_balance<T: Real>(model: &CoefficientModel<T>) -> DetailedBalance<T> {
    let n = model.len();
    let mut coeffs = Vec::with_capacity(n);
    let mut current = Scaled::new(T::one());
    coeffs.push(current);
    for i in 1..n {
        current = current.mul(model.a(i) / model.b(i + 1));
        coeffs.push(current);
    }
    DetailedBalance { coeffs }
}

/// `Q_i = Qtilde_i z^i` built by the same one-step recursion, `Q_{i+1} = Q_i z a_i / b_{i+1}`.
fn equilibrium_scaled<T: Real>(model: &CoefficientModel<T>, z: T) -> Vec<Scaled<T>> {
    let n = model.len();
    let mut out = Vec::with_capacity(n);
    let mut current = Scaled::new(z);
    out.push(current);
    for i in 1..n {
        current = current.mul(z * (model.a(i) / model.b(i + 1)));
        out.push(current);
    }
    out
}

/// Truncated mass `sum_{i<=N} i Q_i` and a geometric estimate of the neglected tail.
pub fn mass_of_z<T: Real>(
    model: &CoefficientModel<T>,
    _qtilde: &DetailedBalance<T>,
    z: T,
) -> Result<(T, T)> {
    let z_s = model.critical_z().value;
    if !(z > T::zero()) {
        return Err(Error::ContractViolation(format!("z = {z} must be positive")));
    }
    if z >= z_s {
        return Err(Error::SupercriticalRejected(format!("z = {z} >= z_s = {z_s}")));
    }
    Ok(mass_and_tail(model, &equilibrium_scaled(model, z), z))
}

fn mass_and_tail<T: Real>(model: &CoefficientModel<T>, q: &[Scaled<T>], z: T) -> (T, T) {
    let n = model.len();
    let rho = q
        .iter()
        .enumerate()
        .map(|(k, s)| T::from_index(k + 1) * s.value())
        .fold(T::zero(), |acc, t| acc + t);
    // Ratio (N Q_N) / ((N-1) Q_{N-1}) in closed form so it survives underflow of Q_N.
    let nf = T::from_index(n);
    let ratio = nf / T::from_index(n - 1) * z * model.a(n - 1) / model.b(n);
    let last = nf * q[n - 1].value();
    let tail = if ratio < T::one() {
        last * ratio / ((T::one() - ratio) * (T::one() - ratio))
    } else {
        T::max_value().unwrap_or(T::one() / T::eps())
    };
    (rho, tail)
}

/// Equilibrium data at a fixed truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium<T> {
    pub qtilde: DetailedBalance<T>,
    pub z_s: T,
    pub z: T,
    /// `Q_1..Q_N`.
    pub q: Vec<T>,
    /// `ln Q_i`, finite even where `Q_i` underflows.
    pub ln_q: Vec<T>,
    pub rho: T,
    pub tail_bound: T,
}

impl<T: Real> Equilibrium<T> {
    /// Equilibrium with a prescribed monomer value `z = Q_1`.
    pub fn at_z(model: &CoefficientModel<T>, qtilde: &DetailedBalance<T>, z: T) -> Result<Self> {
        let z_s = model.critical_z().value;
        if !(z > T::zero()) {
            return Err(Error::ContractViolation(format!("z = {z} must be positive")));
        }
        if z >= z_s {
            return Err(Error::SupercriticalRejected(format!("z = {z} >= z_s = {z_s}")));
        }
        let scaled = equilibrium_scaled(model, z);
        let (rho, tail_bound) = mass_and_tail(model, &scaled, z);
        Ok(Self {
            qtilde: qtilde.clone(),
            z_s,
            z,
            q: scaled.iter().map(|s| s.value()).collect(),
            ln_q: scaled.iter().map(|s| s.ln()).collect(),
            rho,
            tail_bound,
        })
    }

    /// Convenience: build the coefficients and place the equilibrium at `fraction * z_s`.
    pub fn at_fraction(model: &CoefficientModel<T>, fraction: T) -> Result<Self> {
        let db = detailed_balance(model);
        let z = fraction * model.critical_z().value;
        Self::at_z(model, &db, z)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `Q_i` for one-based `i`.
    #[inline]
    pub fn q(&self, i: usize) -> T {
        self.q[i - 1]
    }

    /// `Q_{N}/Q_{N-1}`, to be compared with `z / z_s`.
    pub fn edge_ratio(&self) -> T {
        let n = self.len();
        (self.ln_q[n - 1] - self.ln_q[n - 2]).exp()
    }

    /// Every `Q_i` is a positive normal number, as the perturbation coordinates require.
    pub fn is_representable(&self) -> bool {
        self.q.iter().all(|&q| q >= T::tiny() && q.is_finite())
    }
}

/// Bisection on the increasing map `z -> rho(z)` over `(0, z_s)`.
pub fn solve_z<T: Real>(
    model: &CoefficientModel<T>,
    qtilde: &DetailedBalance<T>,
    rho_target: T,
    tol: T,
) -> Result<Equilibrium<T>> {
    if !(tol > T::zero()) {
        return Err(Error::ContractViolation(format!("tol = {tol} must be positive")));
    }
    if !(rho_target > T::zero()) {
        return Err(Error::ContractViolation(format!("rho = {rho_target} must be positive")));
    }
    let z_s = model.critical_z().value;
    let z_hi = z_s * (T::one() - T::lit(1e-6));
    let (rho_hi, tail_hi) = mass_of_z(model, qtilde, z_hi)?;
    // A divergent tail estimate means rho_s is infinite: only the truncated mass itself bounds the target.
    let divergent = tail_hi >= T::max_value().unwrap_or(T::one() / T::eps());
    let ceiling = if divergent { rho_hi } else { rho_hi - tail_hi };
    if rho_target >= ceiling {
        return Err(Error::SupercriticalRejected(format!(
            "rho = {rho_target} is not below rho(z_s^-) = {rho_hi} minus its tail bound {tail_hi}"
        )));
    }
    let mut lo = T::zero();
    let mut hi = z_hi;
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let (rho, _) = mass_of_z(model, qtilde, mid)?;
        if rho < rho_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever bracket end is closer in mass.
    let pick = |z: T| -> Result<T> {
        if z > T::zero() {
            Ok((mass_of_z(model, qtilde, z)?.0 - rho_target).abs())
        } else {
            Ok(rho_target)
        }
    };
    let z = if pick(lo)? <= pick(hi)? { lo } else { hi };
    let eq = Equilibrium::at_z(model, qtilde, z)?;
    let err = (eq.rho - rho_target).abs();
    if err > tol * rho_target {
        return Err(Error::TruncationTooSmall(format!(
            "bisection stalled with |rho(z) - rho| = {err:e} > {:e}",
            tol * rho_target
        )));
    }
    if eq.tail_bound > tol * rho_target {
        return Err(Error::TruncationTooSmall(format!(
            "tail bound {:e} of the truncated mass exceeds the requested tolerance {:e}; increase N",
            eq.tail_bound,
            tol * rho_target
        )));
    }
    Ok(eq)
}

/// One row of the equilibrium table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumRow<T> {
    pub i: usize,
    pub a_i: T,
    pub b_i: T,
    pub qtilde_i: T,
    pub q_i: T,
    /// `|Qtilde_i a_i - Qtilde_{i+1} b_{i+1}| / (Qtilde_i a_i)`, zero on the last row.
    pub balance_residual: T,
}

pub fn equilibrium_rows<T: Real>(
    model: &CoefficientModel<T>,
    eq: &Equilibrium<T>,
) -> Vec<EquilibriumRow<T>> {
    (1..=model.len())
        .map(|i| {
            let balance_residual = if i < model.len() {
                let lhs = eq.qtilde.scaled(i).mul(model.a(i));
                let rhs = eq.qtilde.scaled(i + 1).mul(model.b(i + 1));
                (rhs.ratio(lhs) - T::one()).abs()
            } else {
                T::zero()
            };
            EquilibriumRow {
                i,
                a_i: model.a(i),
                b_i: model.b(i),
                qtilde_i: eq.qtilde.value(i),
                q_i: eq.q(i),
                balance_residual,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ones(n: usize) -> CoefficientModel<f64> {
        CoefficientModel::<f64>::custom(vec![1.0; n], vec![1.0; n], n).unwrap()
    }

    #[test]
    fn penrose_linear_hand_values() {
        let m = CoefficientModel::<f64>::penrose(1.0, 1.0, 1.0, 2.0, 4).unwrap();
        assert_eq!(m.a_seq(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.b_seq(), &[3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn penrose_square_root_hand_value() {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.0, 1.0, 2.0, 3).unwrap();
        assert_relative_eq!(m.b(2), 2f64.sqrt() * 2.5, max_relative = 1e-15);
        assert_relative_eq!(m.b(2), 3.5355339059327378, max_relative = 1e-15);
    }

    #[test]
    fn constant_custom_model_constants() {
        let m = ones(8);
        let d = m.diagnostics();
        assert_eq!(d.c1, 1.0);
        assert_eq!(d.c2, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut a = vec![1.0; 8];
        a[3] = 0.0;
        assert!(matches!(
            CoefficientModel::<f64>::custom(a, vec![1.0; 8], 8),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            CoefficientModel::<f64>::custom(vec![1.0; 5], vec![1.0; 8], 8),
            Err(Error::LengthMismatch { expected: 8, got: 5 })
        ));
        assert!(CoefficientModel::<f64>::penrose(0.0, 0.5, 1.0, 2.0, 8).is_err());
        assert!(CoefficientModel::<f64>::penrose(0.5, 1.5, 1.0, 2.0, 8).is_err());
        assert!(CoefficientModel::<f64>::penrose(0.5, 0.5, -1.0, 2.0, 8).is_err());
    }

    #[test]
    fn detailed_balance_examples() {
        let db = detailed_balance(&ones(10));
        assert!(db.values().iter().all(|&q| q == 1.0));

        let m = CoefficientModel::<f64>::penrose(1.0, 1.0, 1.0, 2.0, 8).unwrap();
        let db = detailed_balance(&m);
        assert_relative_eq!(db.value(2), 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(db.value(3), 1.0 / 27.0, max_relative = 1e-15);

        let m = CoefficientModel::<f64>::custom(vec![1.0; 12], vec![2.0; 12], 12).unwrap();
        let db = detailed_balance(&m);
        for i in 1..=12 {
            assert_relative_eq!(db.value(i), 2f64.powi(1 - i as i32), max_relative = 1e-15);
        }
    }

    #[test]
    fn detailed_balance_survives_underflow() {
        let m = CoefficientModel::<f64>::penrose(1.0, 1.0, 1.0, 2.0, 1000).unwrap();
        let db = detailed_balance(&m);
        // Qtilde_i = 1 / (i 3^(i-1)), far below f64 range at i = 1000.
        let expected_ln = -(1000f64.ln()) - 999.0 * 3f64.ln();
        assert_relative_eq!(db.ln(1000), expected_ln, max_relative = 1e-13);
        assert_eq!(db.value(1000), 0.0);
        assert!(db.residual(&m) <= 1e-14);
    }

    #[test]
    fn detailed_balance_in_single_precision() {
        let m = CoefficientModel::<f32>::penrose(0.5, 0.0, 1.0, 2.0, 200).unwrap();
        let db = detailed_balance(&m);
        assert!(db.residual(&m) <= 1e-6);
    }

    #[test]
    fn critical_values() {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.5, 1.0, 2.0, 16).unwrap();
        assert_eq!(m.critical_z().value, 2.0);
        let m = CoefficientModel::<f64>::penrose(1.0, 1.0, 1.0, 2.0, 16).unwrap();
        assert_eq!(m.critical_z().value, 3.0);
        let m = CoefficientModel::<f64>::custom(vec![1.0; 16], vec![2.0; 16], 16).unwrap();
        assert_eq!(m.critical_z().value, 2.0);
        let a: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        let cz = CoefficientModel::<f64>::custom(a, b, 16).unwrap().critical_z();
        assert_eq!(cz.value, 3.0);
        assert!(cz.converged);
    }

    #[test]
    fn unsettled_custom_ratio_is_flagged() {
        let a = vec![1.0; 16];
        let b: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let cz = CoefficientModel::<f64>::custom(a, b, 16).unwrap().critical_z();
        assert!(!cz.converged);
    }

    #[test]
    fn mass_closed_forms() {
        let m = ones(60);
        let db = detailed_balance(&m);
        // a = b = 1 gives z_s = 1 and rho(z) = z / (1 - z)^2.
        let (rho, tail) = mass_of_z(&m, &db, 0.5).unwrap();
        assert!((rho - 2.0).abs() <= 1e-12);
        assert!(tail < 1e-12);
        let (rho, _) = mass_of_z(&m, &db, 1e-12).unwrap();
        assert!(rho < 2e-12);

        let m = CoefficientModel::<f64>::custom(vec![1.0; 80], vec![2.0; 80], 80).unwrap();
        let db = detailed_balance(&m);
        // Qtilde_i = 2^(1-i), z = 1: rho = 2 sum i 2^-i = 4.
        let (rho, _) = mass_of_z(&m, &db, 1.0).unwrap();
        assert!((rho - 4.0).abs() <= 1e-12);
        assert!(matches!(mass_of_z(&m, &db, 2.0), Err(Error::SupercriticalRejected(_))));
    }

    #[test]
    fn tail_bound_dominates_true_tail() {
        let m = ones(30);
        let db = detailed_balance(&m);
        let (rho, tail) = mass_of_z(&m, &db, 0.5).unwrap();
        assert!(2.0 - rho <= tail);
    }

    #[test]
    fn solve_z_inverts_closed_form() {
        let m = ones(80);
        let db = detailed_balance(&m);
        let eq = solve_z(&m, &db, 2.0, 1e-12).unwrap();
        assert!((eq.z - 0.5).abs() <= 1e-11);
        let eq = solve_z(&m, &db, 1e-9, 1e-12).unwrap();
        assert!(eq.z < 1e-8);
    }

    #[test]
    fn solve_z_round_trip_geometric() {
        let m = CoefficientModel::<f64>::custom(vec![1.0; 120], vec![2.0; 120], 120).unwrap();
        let db = detailed_balance(&m);
        let eq = solve_z(&m, &db, 1.0, 1e-12).unwrap();
        let (rho, _) = mass_of_z(&m, &db, eq.z).unwrap();
        assert!((rho - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn solve_z_rejects_supercritical_and_coarse_truncation() {
        let m = ones(60);
        let db = detailed_balance(&m);
        assert!(matches!(solve_z(&m, &db, 1e9, 1e-12), Err(Error::SupercriticalRejected(_))));
        let m = ones(12);
        let db = detailed_balance(&m);
        assert!(matches!(solve_z(&m, &db, 2.0, 1e-12), Err(Error::TruncationTooSmall(_))));
    }

    #[test]
    fn equilibrium_ratio_approaches_z_over_zs() {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.5, 1.0, 2.0, 400).unwrap();
        let eq = Equilibrium::at_fraction(&m, 0.5).unwrap();
        let r = eq.edge_ratio();
        assert!((r - 0.5).abs() <= 0.05, "edge ratio {r}");
        assert!(eq.is_representable());
    }

    #[test]
    fn penrose_strong_fragmentation_from_first_index() {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.0, 1.0, 2.0, 100).unwrap();
        let sf = m.default_fragmentation_check(1.0);
        assert!(sf.holds);
        assert_eq!(sf.n_z, 1);
        assert!(sf.sup_excess < 0.0);
    }

    #[test]
    fn table_rows_carry_residuals() {
        let m = CoefficientModel::<f64>::penrose(0.5, 0.5, 1.0, 2.0, 50).unwrap();
        let eq = Equilibrium::at_fraction(&m, 0.5).unwrap();
        let rows = equilibrium_rows(&m, &eq);
        assert_eq!(rows.len(), 50);
        assert_eq!(rows[0].q_i, 1.0);
        assert!(rows.iter().all(|r| r.balance_residual <= 1e-14));
    }
}
