//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point scalar so the same code runs in f32 or f64. The pipeline
//! default is [`crate::Real`] (f64); file formats store f32.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Exact widening of an f32 sample (file formats store f32).
    fn from_f32_exact(v: f32) -> Self;
    /// Nearest representable value; used for constants and counts.
    fn from_f64_near(v: f64) -> Self;
    fn from_usize_near(v: usize) -> Self;
    fn as_f32(self) -> f32;
    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }
            fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }
            fn from_f32_exact(v: f32) -> Self {
                v as $t
            }
            fn from_f64_near(v: f64) -> Self {
                v as $t
            }
            fn from_usize_near(v: usize) -> Self {
                v as $t
            }
            fn as_f32(self) -> f32 {
                self as f32
            }
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
