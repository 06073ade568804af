//! Scalar abstraction so the whole stack runs at f32 (the shipping precision)
//! or f64 (used by some verification tests).

use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps, NumCast};

/// Element type of tensors. Reductions accumulate in f64 regardless of `Self`
/// so that f32 results stay close to the exact value; the stored element is
/// always `Self`.
pub trait Scalar:
    Float + NumAssignOps + NumCast + Default + Debug + Display + Send + Sync + 'static
{
    #[inline]
    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap()
    }

    #[inline]
    fn from_f32(v: f32) -> Self {
        <Self as NumCast>::from(v).unwrap()
    }

    /// Conversion used by the checkpoint format, which stores f32 on disk.
    #[inline]
    fn as_f32(self) -> f32 {
        <f32 as NumCast>::from(self).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
