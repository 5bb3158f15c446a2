use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar used by the metric computations: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Exact conversion of a count. Counts above 2^53 lose precision in `f64`,
    /// which is far beyond any dataset this crate handles.
    fn from_count(n: u64) -> Self {
        <Self as NumCast>::from(n).expect("count representable as float")
    }

    fn hundred() -> Self {
        Self::from_count(100)
    }

    /// Lossy view as `f64` for presentation.
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `num / den`, or zero when the denominator is zero.
pub(crate) fn ratio_or_zero<T: Real>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

/// Rounds half-up to two decimals for display.
pub fn round2(v: f64) -> f64 {
    (v * 100.0 + 0.5).floor() / 100.0
}
