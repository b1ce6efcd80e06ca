//! Decibel conversions for variances normalized to shot noise.

use crate::error::{Error, Result};

/// `10 log10(variance)`.
pub fn db(variance: f64) -> Result<f64> {
    if variance > 0.0 && variance.is_finite() {
        Ok(10.0 * variance.log10())
    } else {
        Err(Error::NonPositiveVariance(variance))
    }
}

pub fn db_inv(level_db: f64) -> f64 {
    10f64.powf(level_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shot_noise_is_zero_db() {
        assert_eq!(db(1.0).unwrap(), 0.0);
    }

    #[test]
    fn known_level() {
        // 10 log10(0.269) = -5.7025
        assert!((db(0.269).unwrap() + 5.702477).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(db(0.0).is_err());
        assert!(db(-0.5).is_err());
        assert!(db(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(v in 1e-6f64..1e6) {
            let back = db_inv(db(v).unwrap());
            prop_assert!(((back - v) / v).abs() < 1e-12);
        }
    }
}
