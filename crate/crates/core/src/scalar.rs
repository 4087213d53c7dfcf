//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All linear algebra goes through `nalgebra`, so the scalar must be a
//! [`RealField`]. Conversions to and from `f64` come from `num-traits`.
//! Random variates are always generated in `f64` and converted.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the crate: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Default
{
    fn inf() -> Self;
    fn neg_inf() -> Self;
    fn eps() -> Self;
    fn finite(self) -> bool;

    /// Converts an `f64` constant.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn inf() -> Self {
                <$t as Float>::infinity()
            }
            #[inline]
            fn neg_inf() -> Self {
                <$t as Float>::neg_infinity()
            }
            #[inline]
            fn eps() -> Self {
                <$t as Float>::epsilon()
            }
            #[inline]
            fn finite(self) -> bool {
                <$t as Float>::is_finite(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
