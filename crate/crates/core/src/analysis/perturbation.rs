//! Relative perturbations `c_i = Q_i (1 + h_i)` and initial-data builders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::norms::{mass_moment, moment_norm};
use crate::error::{Error, Result};
use crate::model::Equilibrium;
use crate::scalar::{index_pow, Real};

/// Where the zero-mass correction is placed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    /// Adjust `h_1` alone.
    #[default]
    Monomer,
    /// Subtract the same constant from every entry.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T> {
    pub h: Vec<T>,
    /// `|sum_i Q_i i h_i|` after projection.
    pub zero_mass_residual: T,
}

impl<T: Real> Perturbation<T> {
    pub fn zero(n: usize) -> Self {
        Self { h: vec![T::zero(); n], zero_mass_residual: T::zero() }
    }

    /// Concentrations `Q_i (1 + h_i)`.
    pub fn concentrations(&self, eq: &Equilibrium<T>) -> Vec<T> {
        self.h.iter().zip(&eq.q).map(|(&h, &q)| q * (T::one() + h)).collect()
    }

    /// Inverse of [`Perturbation::concentrations`], without projection.
    pub fn from_concentrations(c: &[T], eq: &Equilibrium<T>) -> Self {
        let h: Vec<T> = c.iter().zip(&eq.q).map(|(&c, &q)| c / q - T::one()).collect();
        let zero_mass_residual = mass_moment(&h, &eq.q).abs();
        Self { h, zero_mass_residual }
    }
}

/// Remove the mass moment of `h` through the chosen compensation profile.
pub fn project_zero_mass<T: Real>(h: &[T], q: &[T], compensation: Compensation) -> Result<Perturbation<T>> {
    if h.len() != q.len() {
        return Err(Error::LengthMismatch { expected: q.len(), got: h.len() });
    }
    let mut out = h.to_vec();
    let moment = mass_moment(h, q);
    match compensation {
        Compensation::Monomer => out[0] -= moment / q[0],
        Compensation::Uniform => {
            let total = mass_moment(&vec![T::one(); q.len()], q);
            let mu = moment / total;
            out.iter_mut().for_each(|x| *x -= mu);
        }
    }
    if let Some((idx, &v)) = out.iter().enumerate().find(|(_, &v)| v < -T::one()) {
        return Err(Error::InfeasiblePerturbation { index: idx + 1, value: v.as_f64() });
    }
    let zero_mass_residual = mass_moment(&out, q).abs();
    Ok(Perturbation { h: out, zero_mass_residual })
}

/// Subtract the mass moment through `h_1` without a feasibility check; for
/// test vectors of the linear operators, which need not be concentrations.
pub fn remove_mass_moment<T: Real>(h: &mut [T], q: &[T]) {
    let moment = mass_moment(h, q);
    h[0] -= moment / q[0];
}

/// Sign pattern of a polynomial tail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SignPattern {
    #[default]
    Positive,
    Alternating,
    Random { seed: u64 },
}

impl SignPattern {
    pub fn signs(&self, n: usize) -> Vec<f64> {
        match *self {
            SignPattern::Positive => vec![1.0; n],
            SignPattern::Alternating => (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            SignPattern::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
            }
        }
    }
}

/// How the tail amplitude is attached to the equilibrium.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailWeight {
    /// `Q_i h_i = A s_i i^{-p}`: the concentration excess decays polynomially,
    /// so `||h||_{X_{1+k}}` behaves like `sum i^{1+k-p}`.
    #[default]
    Concentration,
    /// `h_i = A s_i i^{-p}`.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTail<T> {
    pub perturbation: Perturbation<T>,
    /// `(k, ||h||_{X_{1+k}})` for every requested `k`.
    pub norms: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Polynomial tail of exponent `p`, projected to zero mass through `h_1`.
pub fn make_polynomial_tail<T: Real>(
    p: f64,
    signs: SignPattern,
    amplitude: f64,
    weight: TailWeight,
    q: &[T],
    ks: &[f64],
) -> Result<PolynomialTail<T>> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::Validation(format!("tail amplitude {amplitude} must be nonnegative")));
    }
    let n = q.len();
    let s = signs.signs(n);
    let raw: Vec<T> = (0..n)
        .map(|k| {
            let v = T::lit(amplitude * s[k]) * index_pow(k + 1, T::lit(-p));
            match weight {
                TailWeight::Concentration => v / q[k],
                TailWeight::Relative => v,
            }
        })
        .collect();
    let perturbation = project_zero_mass(&raw, q, Compensation::Monomer)?;
    let mut warnings = Vec::new();
    for &k in ks {
        let divergent = match weight {
            TailWeight::Concentration => p <= k + 2.0,
            TailWeight::Relative => false,
        };
        if divergent {
            let msg = format!("tail exponent p = {p} <= k + 2 = {}: the X_(1+k) norm grows without bound in N", k + 2.0);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let norms = ks.iter().map(|&k| (k, moment_norm(&perturbation.h, q, T::lit(k)).as_f64())).collect();
    Ok(PolynomialTail { perturbation, norms, warnings })
}
