use core::fmt::{Debug, Display};
use core::iter::Sum;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a tensor graph.
///
/// Every tensor in a [`Graph`](crate::Graph) shares one `Scalar`, so mixing
/// precisions inside a graph is a type error. Training runs in `f32`; gradient
/// checks run in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    // Transcendentals go through `libm` so results do not depend on whether
    // some other crate in the build enables `num-traits/std`.
    fn m_exp(self) -> Self;
    fn m_ln(self) -> Self;
    fn m_powf(self, e: Self) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    fn m_exp(self) -> Self {
        libm::expf(self)
    }
    fn m_ln(self) -> Self {
        libm::logf(self)
    }
    fn m_powf(self, e: Self) -> Self {
        libm::powf(self, e)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    fn m_exp(self) -> Self {
        libm::exp(self)
    }
    fn m_ln(self) -> Self {
        libm::log(self)
    }
    fn m_powf(self, e: Self) -> Self {
        libm::pow(self, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }
}
