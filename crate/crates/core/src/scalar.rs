//! Scalar abstractions.
//!
//! Tensor construction, CP reconstruction and the factor-structured
//! derivatives only need ring operations, so they are written against
//! [`Scalar`] and run unchanged over floats and exact rationals. The
//! optimizers need square roots and ordering-aware tolerances and are
//! written against [`Real`].

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Field element usable as a tensor or factor entry.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// `true` when `self` cannot be distinguished from zero relative to `scale`.
    ///
    /// Exact types answer `self == 0`; floating types use a relative threshold.
    fn is_negligible(&self, scale: &Self) -> bool;

    /// Lossy conversion used for reporting and for seeding float solvers.
    fn to_f64_lossy(&self) -> f64;

    fn from_i64(v: i64) -> Self;

    /// Converts an exact rational. Float types round; exact types may fail on overflow.
    fn from_rational(r: &BigRational) -> Option<Self>;
}

/// Real floating-point scalar used by the optimizers.
pub trait Real: Scalar + Float + FromPrimitive + Copy {
    /// Lossless-enough conversion from an `f64` literal or configuration value.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }
}

macro_rules! impl_float_scalar {
    ($t:ty, $rel:expr) => {
        impl Scalar for $t {
            fn is_negligible(&self, scale: &Self) -> bool {
                self.abs() <= $rel * scale.abs().max(1.0)
            }
            fn to_f64_lossy(&self) -> f64 {
                *self as f64
            }
            fn from_i64(v: i64) -> Self {
                v as $t
            }
            fn from_rational(r: &BigRational) -> Option<Self> {
                let n = r.numer().to_f64()?;
                let d = r.denom().to_f64()?;
                Some((n / d) as $t)
            }
        }
        impl Real for $t {}
    };
}

impl_float_scalar!(f64, 1e-12);
impl_float_scalar!(f32, 1e-6);

impl Scalar for BigRational {
    fn is_negligible(&self, _scale: &Self) -> bool {
        num_traits::Zero::is_zero(self)
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_rational(r: &BigRational) -> Option<Self> {
        Some(r.clone())
    }
}

impl Scalar for Rational64 {
    fn is_negligible(&self, _scale: &Self) -> bool {
        num_traits::Zero::is_zero(self)
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    fn from_i64(v: i64) -> Self {
        Rational64::from_integer(v)
    }
    fn from_rational(r: &BigRational) -> Option<Self> {
        Some(Rational64::new(r.numer().to_i64()?, r.denom().to_i64()?))
    }
}

/// Builds an exact rational `num/den`.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Formats a rational as `num/den`, the factor-file representation.
pub fn rational_to_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `num/den` or a bare integer.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if num_traits::Zero::is_zero(&d) {
                return None;
            }
            Some(BigRational::new(n, d))
        }
        None => Some(BigRational::from_integer(s.parse().ok()?)),
    }
}
