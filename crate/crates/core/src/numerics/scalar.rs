use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical core is written against (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Comparison slack used by pivoting, pruning and equality tests:
    /// `1e-9` for `f64`, looser for types with less precision.
    #[inline]
    fn tol() -> Self {
        Self::lit(1e-9).max(Self::epsilon() * Self::lit(1e3))
    }

    /// Tolerance on stochastic-row sums (`1e-12` for `f64`).
    #[inline]
    fn sum_tol() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(64.0))
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
