use crate::dictionary::wrap_unit;
use crate::error::{Error, Result};

// Signum with sgn(0) = 1, so that f = 0.5 maps to −90° like its forward image.
fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Frequency estimate in `[0, 1)` to arrival angle in degrees for element
/// spacing `d` in wavelengths.
pub fn doa_map(f_hat: f64, d: f64) -> Result<f64> {
    if !f_hat.is_finite() || !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidInput(format!("doa_map needs finite f and d > 0 (f={f_hat}, d={d})")));
    }
    let f_tilde = f_hat - 0.5 * (sgn(f_hat - 0.5) + 1.0);
    let s = f_tilde / d;
    if s.abs() > 1.0 {
        return Err(Error::InvalidAngle(s.abs()));
    }
    Ok(s.asin().to_degrees())
}

/// Normalized frequency of a plane wave from `theta_deg`, wrapped into `[0, 1)`.
pub fn angle_to_frequency(theta_deg: f64, d: f64) -> f64 {
    wrap_unit(d * theta_deg.to_radians().sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn broadside() {
        assert_eq!(doa_map(0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn round_trip_13_degrees() {
        let f = angle_to_frequency(13.0, 0.5);
        assert!((doa_map(f, 0.5).unwrap() - 13.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_branch() {
        assert!((doa_map(0.75, 0.5).unwrap() + 30.0).abs() < 1e-12);
        let f = angle_to_frequency(-29.0, 0.5);
        assert!(f > 0.5);
        assert!((doa_map(f, 0.5).unwrap() + 29.0).abs() < 1e-9);
    }

    #[test]
    fn endfire_is_consistent() {
        assert!((doa_map(0.5, 0.5).unwrap() + 90.0).abs() < 1e-12);
        assert_eq!(angle_to_frequency(-90.0, 0.5), 0.5);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(doa_map(0.4, 0.25), Err(Error::InvalidAngle(_))));
        assert!(doa_map(0.2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(theta in -89.0f64..89.0) {
            let f = angle_to_frequency(theta, 0.5);
            prop_assert!((doa_map(f, 0.5).unwrap() - theta).abs() < 1e-9);
        }
    }
}
