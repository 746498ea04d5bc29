use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// One radar return: range (m), azimuth (rad), radial velocity (m/s),
/// linear power and the index of the frame it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarDetection {
    pub range: f64,
    pub azimuth: f64,
    pub doppler: f64,
    pub intensity: f64,
    pub frame: i64,
}

impl RadarDetection {
    pub fn new(range: f64, azimuth: f64, doppler: f64, intensity: f64, frame: i64) -> Result<Self> {
        if ![range, azimuth, doppler, intensity].iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite detection field"));
        }
        if range < 0.0 || intensity < 0.0 {
            return Err(Error::invalid(format!(
                "range ({range}) and intensity ({intensity}) must be non-negative"
            )));
        }
        Ok(Self { range, azimuth: wrap_angle(azimuth), doppler, intensity, frame })
    }

    /// Planar Cartesian position `(r cos theta, r sin theta)`.
    pub fn planar(&self) -> (f64, f64) {
        (self.range * self.azimuth.cos(), self.range * self.azimuth.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.25)- 0.25).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(RadarDetection::new(-1.0, 0.0, 0.0, 1.0, 0).is_err());
        assert!(RadarDetection::new(1.0, 0.0, 0.0, -1.0, 0).is_err());
        assert!(RadarDetection::new(1.0, f64::NAN, 0.0, 1.0, 0).is_err());
        let d = RadarDetection::new(1.0, 4.0, 0.0, 1.0, 0).unwrap();
        assert!(d.azimuth > -PI && d.azimuth <= PI);
    }
}
