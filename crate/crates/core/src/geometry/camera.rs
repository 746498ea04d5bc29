use serde::{Deserialize, Serialize};

use super::{ExtrinsicTransform, Vec3};
use crate::{Error, Result};

/// Default near-plane cull distance in meters.
pub const DEFAULT_Z_MIN: f64 = 0.1;

/// Ideal pinhole intrinsics. Pixel `(i, j)` is centered at integer
/// coordinates `(u, v) = (i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive and finite"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!("cx = {} outside [0, {})", self.cx, self.width)));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!("cy = {} outside [0, {})", self.cy, self.height)));
        }
        Ok(())
    }

    /// Intrinsics of a feature map subsampled by `stride`.
    pub fn at_stride(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let s = stride as f64;
        Self::new(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width.div_ceil(stride),
            self.height.div_ceil(stride),
        )
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Result of projecting one point. `in_front` is false when the camera-frame
/// depth is at or below the cull distance; `u`, `v` are then not meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z_cam: f64,
    pub in_front: bool,
}

pub fn project_point(k: &CameraIntrinsics, t: &ExtrinsicTransform, x_radar: &Vec3) -> Projection {
    project_point_with(k, t, x_radar, DEFAULT_Z_MIN)
}

pub fn project_point_with(
    k: &CameraIntrinsics,
    t: &ExtrinsicTransform,
    x_radar: &Vec3,
    z_min: f64,
) -> Projection {
    let p = t.transform_point(x_radar);
    let in_front = p.z > z_min;
    let (u, v) = if in_front {
        (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
    } else {
        (f64::NAN, f64::NAN)
    };
    Projection { u, v, z_cam: p.z, in_front }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Mat3, TwistVector};

    #[test]
    fn boresight_hits_principal_point() {
        let k = CameraIntrinsics::default();
        let p = project_point(&k, &ExtrinsicTransform::identity(), &Vec3::new(0.0, 0.0, 10.0));
        assert_eq!((p.u, p.v, p.z_cam, p.in_front), (320.0, 240.0, 10.0, true));
    }

    #[test]
    fn lateral_offset() {
        let k = CameraIntrinsics::default();
        let p = project_point(&k, &ExtrinsicTransform::identity(), &Vec3::new(1.0, 0.0, 10.0));
        assert!((p.u - 370.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_flagged() {
        let k = CameraIntrinsics::default();
        let p = project_point(&k, &ExtrinsicTransform::identity(), &Vec3::new(0.0, 0.0, 0.05));
        assert!(!p.in_front);
        let p = project_point(&k, &ExtrinsicTransform::identity(), &Vec3::new(0.0, 0.0, -3.0));
        assert!(!p.in_front);
    }

    #[test]
    fn matches_homogeneous_pipeline() {
        let k = CameraIntrinsics::new(480.0, 510.0, 300.0, 250.0, 640, 480).unwrap();
        let t = se3_exp(&TwistVector::from_slice(&[0.2, -0.1, 0.5, 0.05, -0.1, 0.02])).unwrap();
        let x = Vec3::new(1.5, -0.7, 12.0);
        let p = project_point(&k, &t, &x);
        let h = t.to_homogeneous() * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        let proj = k.to_matrix() * Vec3::new(h.x, h.y, h.z);
        assert!((p.u - proj.x / proj.z).abs() < 1e-9);
        assert!((p.v - proj.y / proj.z).abs() < 1e-9);
        let _ = Mat3::identity();
    }

    #[test]
    fn intrinsics_validation_and_stride() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        let s = CameraIntrinsics::default().at_stride(4).unwrap();
        assert_eq!((s.fx, s.cx, s.width, s.height), (125.0, 80.0, 160, 120));
    }
}
