//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by geometry, pooling, and the energy network: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + num_traits::NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Angle reduced into `[0, 2π)` with an exact remainder, so that `phi` and
    /// `phi + 2π` reduce to the same value whenever the sum is representable.
    #[inline]
    fn wrap_tau(self) -> Self {
        let tau = Self::TAU();
        let r = self % tau;
        if r < Self::zero() {
            r + tau
        } else {
            r
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_tau_is_exact_for_representable_shifts() {
        let phi = 0.5_f64;
        let shifted = phi + std::f64::consts::TAU;
        assert_eq!(shifted.wrap_tau().to_bits(), phi.wrap_tau().to_bits());
        assert!((-0.25_f64).wrap_tau() > 6.0);
        assert_eq!(f32::lit(0.25), 0.25_f32);
    }
}
