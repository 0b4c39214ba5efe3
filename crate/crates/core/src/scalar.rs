//! The floating-point abstraction every numeric routine in the crate is written against.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Real scalar: `f32` or `f64`.
///
/// Besides the arithmetic bounds this carries the two random variates the
/// posterior sampler needs, so generic code does not have to repeat
/// `rand_distr` bounds at every call site.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Chi-squared variate with `dof` degrees of freedom (`dof > 0`).
    fn chi_squared<R: Rng + ?Sized>(rng: &mut R, dof: Self) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable")
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn chi_squared<R: Rng + ?Sized>(rng: &mut R, dof: Self) -> Self {
                ChiSquared::new(dof)
                    .expect("positive degrees of freedom")
                    .sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
