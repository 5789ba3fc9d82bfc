use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Coordinate type accepted by the generic parts of the crate.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless-enough widening used for reporting.
    fn to_f64_lossy(self) -> f64 {
        num_traits::NumCast::from(self).unwrap_or(f64::NAN)
    }

    /// Narrowing from `f64`; saturates to infinity on overflow.
    fn from_f64_lossy(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).unwrap_or_else(Self::infinity)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
