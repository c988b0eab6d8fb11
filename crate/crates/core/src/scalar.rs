//! Scalar abstraction for the numeric parts of the crate (oracle, simulator).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type a chain can be simulated in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Default relative tolerance against the oracle.
    const TOLERANCE: f64;
    const NAME: &'static str;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const TOLERANCE: f64 = 1e-4;
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const TOLERANCE: f64 = 1e-10;
    const NAME: &'static str = "f64";
}
