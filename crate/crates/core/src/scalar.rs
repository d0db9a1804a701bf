//! Scalar types the polynomial layer is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Floating point coefficient type for polynomials.
///
/// Every arithmetic result whose magnitude falls below
/// [`Scalar::CANONICAL_ZERO`] is dropped from the sparse representation.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + FromStr + Default + Sum + Send + Sync + 'static
{
    /// Coefficients with `|c| < CANONICAL_ZERO` are not stored.
    const CANONICAL_ZERO: Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const CANONICAL_ZERO: Self = 1e-14;
}

impl Scalar for f32 {
    const CANONICAL_ZERO: Self = 1e-6;
}
