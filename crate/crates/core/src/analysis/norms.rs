//! Weighted sequence norms.
//!
//! All norms take the perturbation `h` together with the equilibrium
//! weights `Q`; index `i` is one-based in the formulas.

use crate::scalar::{index_pow, Real};

/// `sum_i Q_i i^k |h_i|`.
pub fn weighted_norm<T: Real>(h: &[T], q: &[T], k: T) -> T {
    h.iter()
        .zip(q)
        .enumerate()
        .fold(T::zero(), |acc, (idx, (&x, &qi))| acc + qi * index_pow(idx + 1, k) * x.abs())
}

/// Norm of `X_{1+k}`.
pub fn moment_norm<T: Real>(h: &[T], q: &[T], k: T) -> T {
    weighted_norm(h, q, T::one() + k)
}

/// `sum_i Q_i e^{eta i} |h_i|`.
pub fn exp_norm<T: Real>(h: &[T], q: &[T], eta: T) -> T {
    h.iter()
        .zip(q)
        .enumerate()
        .fold(T::zero(), |acc, (idx, (&x, &qi))| acc + qi * (eta * T::from_index(idx + 1)).exp() * x.abs())
}

/// `sum_i Q_i a_i b_i`.
pub fn h_inner<T: Real>(a: &[T], b: &[T], q: &[T]) -> T {
    a.iter().zip(b).zip(q).fold(T::zero(), |acc, ((&x, &y), &qi)| acc + qi * x * y)
}

pub fn h_norm<T: Real>(h: &[T], q: &[T]) -> T {
    h_inner(h, h, q).sqrt()
}

/// `sum_i Q_i i h_i`, zero on the admissible subspace.
pub fn mass_moment<T: Real>(h: &[T], q: &[T]) -> T {
    h.iter()
        .zip(q)
        .enumerate()
        .fold(T::zero(), |acc, (idx, (&x, &qi))| acc + qi * T::from_index(idx + 1) * x)
}

/// Constant of the embedding `||h||_{X_1} <= C ||h||_H`.
pub fn embedding_constant<T: Real>(q: &[T]) -> T {
    q.iter()
        .enumerate()
        .fold(T::zero(), |acc, (idx, &qi)| {
            let i = T::from_index(idx + 1);
            acc + qi * i * i
        })
        .sqrt()
}

/// `||h||_{X_1}` computed from concentrations, `sum_i i |c_i - Q_i|`.
pub fn concentration_distance<T: Real>(c: &[T], d: &[T]) -> T {
    c.iter()
        .zip(d)
        .enumerate()
        .fold(T::zero(), |acc, (idx, (&x, &y))| acc + T::from_index(idx + 1) * (x - y).abs())
}

/// `sum_i i^{1+k} |v_i|` for concentration-scaled vectors `v = Q h`.
pub fn scaled_moment_norm<T: Real>(v: &[T], k: T) -> T {
    v.iter()
        .enumerate()
        .fold(T::zero(), |acc, (idx, &x)| acc + index_pow(idx + 1, T::one() + k) * x.abs())
}
