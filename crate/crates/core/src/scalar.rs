use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar the signal-processing code is generic over.
///
/// Implemented for `f32` and `f64`. Physical descriptors (probe geometry,
/// aberration profiles, phantoms) are always `f64`; only sample data and the
/// arithmetic on it follow `T`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + FftNum + Default + Debug + Display + Sum + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
