//! Minimal numeric abstraction so rate formulas can run in `f64` or in exact
//! rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    /// Exact conversion of a stored rate. Every finite `f64` is a dyadic
    /// rational, so the rational implementation loses nothing.
    fn from_rate(x: f64) -> Self;
    fn from_count(c: u64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn from_rate(x: f64) -> Self {
        x
    }
    fn from_count(c: u64) -> Self {
        c as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn from_rate(x: f64) -> Self {
        BigRational::from_float(x).expect("rates are finite")
    }
    fn from_count(c: u64) -> Self {
        BigRational::from_integer(BigInt::from(c))
    }
    fn to_f64(&self) -> f64 {
        use num_traits::ToPrimitive;
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
