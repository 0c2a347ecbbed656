use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point coordinate and distance type: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn cast_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any float type")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }

    fn from_count(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("count fits in float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
