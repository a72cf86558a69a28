//! Floating-point abstraction used by the numeric core.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar the samplers and linear algebra are generic over.
///
/// Implemented for `f32` and `f64`. Special functions (normal CDF, log-gamma)
/// are evaluated in `f64` and converted back, so `f32` chains trade accuracy
/// in tail probabilities for memory.
pub trait Real: RealField + Copy + ToPrimitive {
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn c(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_real(self) -> bool {
        self.to_f64_lossy().is_finite()
    }

    #[inline]
    fn infinity() -> Self {
        Self::c(f64::INFINITY)
    }

    #[inline]
    fn neg_infinity() -> Self {
        Self::c(f64::NEG_INFINITY)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::c(0.5), 0.5);
        assert_eq!(<f32 as Real>::c(0.25), 0.25f32);
        assert!(!<f64 as Real>::infinity().is_finite_real());
        assert!(<f32 as Real>::neg_infinity() < 0.0);
    }
}
