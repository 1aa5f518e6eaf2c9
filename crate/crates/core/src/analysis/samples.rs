//! Seeded random test vectors on the zero-mass subspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::perturbation::remove_mass_moment;
use crate::scalar::{index_pow, Real};

/// Independent generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sign(rng: &mut ChaCha8Rng, bias: f64) -> f64 {
    if rng.random::<f64>() < bias {
        1.0
    } else {
        -1.0
    }
}

/// A zero-mass vector drawn from one of several families: heavy polynomial
/// tails in concentration scale, bounded relative noise, sparse spikes and
/// a single dominant index with small neighbours.
pub fn random_zero_mass<T: Real>(rng: &mut ChaCha8Rng, q: &[T]) -> Vec<T> {
    let n = q.len();
    let mut h = vec![T::zero(); n];
    let bias = rng.random::<f64>();
    match rng.random_range(0..4u8) {
        0 => {
            let p = rng.random_range(0.5..6.0);
            for (k, x) in h.iter_mut().enumerate() {
                let v = sign(rng, bias) * rng.random::<f64>() * (k as f64 + 1.0).powf(-p);
                *x = T::lit(v) / q[k];
            }
        }
        1 => {
            for x in h.iter_mut() {
                *x = T::lit(sign(rng, bias) * rng.random::<f64>());
            }
        }
        2 => {
            let spikes = rng.random_range(1..=4usize.min(n));
            for _ in 0..spikes {
                let k = rng.random_range(0..n);
                let v = sign(rng, bias) * rng.random_range(0.1..1.0);
                h[k] = T::lit(v) / q[k];
            }
        }
        _ => {
            let k = rng.random_range(1..n);
            let v = sign(rng, bias);
            h[k] = T::lit(v) / q[k];
            for j in [k - 1, k + 1] {
                if j < n && rng.random::<bool>() {
                    h[j] = T::lit(sign(rng, 0.5) * 1e-3) / q[j];
                }
            }
        }
    }
    // Indices where `Q_i` underflows carry no representable concentration.
    h.iter_mut().filter(|x| !x.is_finite()).for_each(|x| *x = T::zero());
    remove_mass_moment(&mut h, q);
    h
}

/// Scale `h` to unit `sum Q_i i^{w} |h_i|`.
pub fn normalize<T: Real>(h: &mut [T], q: &[T], weight_exponent: T) {
    let norm = h
        .iter()
        .zip(q)
        .enumerate()
        .fold(T::zero(), |acc, (k, (&x, &qi))| acc + qi * index_pow(k + 1, weight_exponent) * x.abs());
    if norm > T::zero() {
        h.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::norms::{mass_moment, moment_norm};

    #[test]
    fn samples_are_zero_mass_and_reproducible() {
        let q: Vec<f64> = (1..=50).map(|i| 0.6f64.powi(i)).collect();
        for idx in 0..200 {
            let a = random_zero_mass(&mut sample_rng(7, idx), &q);
            let b = random_zero_mass(&mut sample_rng(7, idx), &q);
            assert_eq!(a, b);
            let scale = moment_norm(&a, &q, 0.0);
            assert!(mass_moment(&a, &q).abs() <= 1e-12 * scale);
        }
    }
}
