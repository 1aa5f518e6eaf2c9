//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar usable throughout the crate: `f64` and `f32` out of the box.
///
/// Everything that needs an eigensolve or a dense factorization goes through
/// nalgebra, so the bound is nalgebra's `RealField` plus the num-traits
/// conversions used for reporting.
pub trait Real:
    RealField + Copy + ToPrimitive + std::fmt::LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from a literal.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn from_index(i: usize) -> Self {
        nalgebra::convert(i as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }

    /// Smallest positive normal value.
    #[inline]
    fn tiny() -> Self {
        Self::min_value().map(|m| -m).unwrap_or_else(|| Self::lit(f64::MIN_POSITIVE))
    }
}

impl Real for f64 {
    #[inline]
    fn tiny() -> Self {
        f64::MIN_POSITIVE
    }
}

impl Real for f32 {
    #[inline]
    fn tiny() -> Self {
        f32::MIN_POSITIVE
    }
}

/// `sgn` with `sgn(0) = 0`.
#[inline]
pub fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `i^p` for a one-based index.
#[inline]
pub fn index_pow<T: Real>(i: usize, p: T) -> T {
    T::from_index(i).powf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(<f64 as Real>::from_index(7), 7.0);
        assert_eq!(<f64 as Real>::tiny(), f64::MIN_POSITIVE);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0f64), 0.0);
        assert_eq!(sign(-0.0f64), 0.0);
        assert_eq!(sign(-3.0f64), -1.0);
        assert_eq!(sign(2.0f32), 1.0);
    }
}
