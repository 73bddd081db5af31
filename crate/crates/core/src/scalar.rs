//! Scalar abstraction shared by the numerical core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating-point scalar the model, spectral and covariance code is written against.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Tolerance `x`, widened to a few hundred ulps for narrow types.
    fn tol(x: f64) -> Self {
        Self::lit(x).max(Self::epsilon() * Self::lit(256.0))
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over a [`Real`].
pub type C<T> = Complex<T>;

pub(crate) fn cre<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// `n!` in the scalar type.
pub(crate) fn factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * T::from_usize_lossy(k))
}

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub(crate) fn binomial<T: Real>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(T::one(), |acc, i| {
        acc * T::from_usize_lossy(n - i) / T::from_usize_lossy(i + 1)
    })
}

/// Integer power of a complex number by repeated squaring.
pub(crate) fn cpowi<T: Real>(z: C<T>, mut e: usize) -> C<T> {
    let mut base = z;
    let mut acc = cre(T::one());
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * base;
        }
        base = base * base;
        e >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinatorics() {
        assert_eq!(factorial::<f64>(0), 1.0);
        assert_eq!(factorial::<f64>(5), 120.0);
        assert_eq!(binomial::<f64>(5, 2), 10.0);
        assert_eq!(binomial::<f64>(3, 4), 0.0);
        assert_eq!(binomial::<f32>(1, 0), 1.0);
    }

    #[test]
    fn complex_power() {
        let z = Complex::new(0.3f64, -0.7);
        let direct = z * z * z * z * z;
        assert!((cpowi(z, 5) - direct).norm() < 1e-15);
        assert_eq!(cpowi(z, 0), Complex::new(1.0, 0.0));
    }

    #[test]
    fn tolerance_widens_for_f32() {
        assert_eq!(f64::tol(1e-12), 1e-12);
        assert!(f32::tol(1e-12) > 1e-6);
    }
}
