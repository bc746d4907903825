//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the engine can run on (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Relative precision used when deciding whether two values coincide.
    fn tolerance() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn tolerance() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn tolerance() -> Self {
        1e-5
    }
}

/// Neumaier-compensated sum in a fixed iteration order.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean<T: Real>(values: &[T]) -> T {
    compensated_sum(values.iter().copied()) / T::from_usize_lossy(values.len())
}

/// Population standard deviation.
pub fn std_dev<T: Real>(values: &[T]) -> T {
    let m = mean(values);
    let var = compensated_sum(values.iter().map(|&v| (v - m) * (v - m)))
        / T::from_usize_lossy(values.len());
    var.sqrt()
}

/// Largest absolute value, or one when every value is zero.
pub fn scale_of<T: Real>(values: &[T]) -> T {
    let s = values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if s > T::zero() && s.is_finite() {
        s
    } else {
        T::one()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values.iter().copied()), 2.0);
    }

    #[test]
    fn std_dev_of_constant_is_zero() {
        assert_eq!(std_dev(&[3.0f32; 5]), 0.0);
        assert_eq!(scale_of::<f64>(&[0.0, 0.0]), 1.0);
    }
}
