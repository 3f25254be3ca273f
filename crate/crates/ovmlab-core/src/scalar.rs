//! Probability scalar abstraction.
//!
//! Distribution construction and exact value computation are generic over
//! [`Prob`] so that the same code path yields fast `f64` estimates or exact
//! `BigRational` results. Policy parameters are stored as 64-bit rationals
//! and embedded through [`Prob::from_ratio`], which is exact for both
//! instantiations up to `f64` rounding.

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, ToPrimitive, Zero};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Sub};

pub trait Prob:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Sum<Self>
{
    /// Embed an exact 64-bit rational parameter.
    fn from_ratio(r: Rational64) -> Self;

    /// Embed a finite `f64` weight. Every finite float is a rational, so the
    /// exact instantiation represents it without loss.
    fn from_f64_weight(w: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn abs_diff(&self, other: &Self) -> Self {
        if self >= other {
            self.clone() - other.clone()
        } else {
            other.clone() - self.clone()
        }
    }
}

impl Prob for f64 {
    fn from_ratio(r: Rational64) -> Self {
        *r.numer() as f64 / *r.denom() as f64
    }

    fn from_f64_weight(w: f64) -> Self {
        w
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Prob for BigRational {
    fn from_ratio(r: Rational64) -> Self {
        BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
    }

    fn from_f64_weight(w: f64) -> Self {
        BigRational::from_float(w).unwrap_or_else(BigRational::zero)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn embeds_rationals_exactly() {
        let exact = <BigRational as Prob>::from_ratio(ratio(4, 5));
        assert_eq!(exact, BigRational::new(BigInt::from(4), BigInt::from(5)));
        let approx = <f64 as Prob>::from_ratio(ratio(4, 5));
        assert!((approx - 0.8).abs() < 1e-15);
    }

    #[test]
    fn float_weights_round_trip_through_rationals() {
        let w = 0.123456789_f64;
        let exact = <BigRational as Prob>::from_f64_weight(w);
        assert_eq!(Prob::to_f64(&exact), w);
    }

    #[test]
    fn abs_diff_is_symmetric() {
        let a = <BigRational as Prob>::from_ratio(ratio(1, 3));
        let b = <BigRational as Prob>::from_ratio(ratio(1, 4));
        assert_eq!(a.abs_diff(&b), b.abs_diff(&a));
        assert_eq!(
            a.abs_diff(&b),
            <BigRational as Prob>::from_ratio(ratio(1, 12))
        );
    }
}
