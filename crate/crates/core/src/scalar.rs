//! Scalar abstraction shared by network evaluation, geometry and encoding.
//!
//! Training and bulk evaluation run in `f64`; soundness replay and SMT
//! emission run in exact rationals. Every finite float has an exact rational
//! value, so moving from `f64` to [`BigRational`] never loses information.

use std::fmt::Debug;

use num_rational::BigRational;
use num_traits::{Num, Signed, Zero};

use crate::rational;

pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Send + Sync + 'static
{
    const EXACT: bool;

    fn to_f64(&self) -> f64;

    /// Exact rational value of `self`. `None` for NaN or infinities.
    fn to_exact(&self) -> Option<BigRational>;

    /// Nearest representable value; exact for rational scalars.
    fn from_exact(r: &BigRational) -> Self;

    fn from_f64(v: f64) -> Self;

    fn is_finite(&self) -> bool;

    fn relu(&self) -> Self {
        if *self > Self::zero() {
            self.clone()
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn to_f64(&self) -> f64 {
        *self
    }
    fn to_exact(&self) -> Option<BigRational> {
        BigRational::from_float(*self)
    }
    fn from_exact(r: &BigRational) -> Self {
        rational::to_f64(r)
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;

    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn to_exact(&self) -> Option<BigRational> {
        BigRational::from_float(*self)
    }
    fn from_exact(r: &BigRational) -> Self {
        rational::to_f64(r) as f32
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_finite(&self) -> bool {
        f32::is_finite(*self)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn to_f64(&self) -> f64 {
        rational::to_f64(self)
    }
    fn to_exact(&self) -> Option<BigRational> {
        Some(self.clone())
    }
    fn from_exact(r: &BigRational) -> Self {
        r.clone()
    }
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).unwrap_or_else(BigRational::zero)
    }
    fn is_finite(&self) -> bool {
        true
    }
}
