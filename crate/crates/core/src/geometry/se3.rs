use serde::{Deserialize, Serialize};

use super::quaternion::UnitQuaternion;
use super::so3;
use super::{Mat3, Mat4, Mat6, Vec3, Vec6};
use crate::{Error, Result};

/// Logarithm refuses rotation angles within this margin of pi.
pub const LOG_PI_MARGIN: f64 = 1e-6;

/// Element of se(3) stored as `(rho, phi)`: translation part (m) first,
/// rotation part (rad) second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TwistVector(pub Vec6);

impl TwistVector {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        TwistVector(Vec6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn zero() -> Self {
        TwistVector(Vec6::zeros())
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        TwistVector(Vec6::from_column_slice(v))
    }

    pub fn rho(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn phi(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn scaled(&self, s: f64) -> Self {
        TwistVector(self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn as_array(&self) -> [f64; 6] {
        let mut a = [0.0; 6];
        a.copy_from_slice(self.0.as_slice());
        a
    }
}

/// Rigid transform mapping radar-frame points into the camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct ExtrinsicTransform {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<ExtrinsicTransform> for TransformRepr {
    fn from(t: ExtrinsicTransform) -> Self {
        let r = &t.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for ExtrinsicTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let m = Mat3::from_fn(|i, j| r.rotation[i][j]);
        ExtrinsicTransform::new(m, Vec3::from(r.translation))
    }
}

impl Default for ExtrinsicTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl ExtrinsicTransform {
    /// Orthonormality tolerance accepted by [`ExtrinsicTransform::new`].
    pub const ORTHO_TOL: f64 = 1e-6;

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite transform entry"));
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if ortho > Self::ORTHO_TOL || rotation.determinant() <= 0.0 {
            return Err(Error::invalid(format!(
                "rotation is not a proper orthonormal matrix (|RtR - I| = {ortho:.3e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_axis_angle(axis_angle: Vec3) -> Self {
        Self { rotation: so3::exp(&axis_angle), translation: Vec3::zeros() }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self * other`
    pub fn compose(&self, other: &ExtrinsicTransform) -> ExtrinsicTransform {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> ExtrinsicTransform {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Mat4) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("homogeneous matrix bottom row must be 0 0 0 1"));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }
}

pub fn se3_exp(xi: &TwistVector) -> Result<ExtrinsicTransform> {
    if !xi.is_finite() {
        return Err(Error::invalid("non-finite twist"));
    }
    let phi = xi.phi();
    let rotation = so3::exp(&phi);
    let translation = so3::left_jacobian(&phi) * xi.rho();
    Ok(ExtrinsicTransform { rotation, translation })
}

pub fn se3_log(t: &ExtrinsicTransform) -> Result<TwistVector> {
    let (phi, angle) = so3::log(&t.rotation);
    if std::f64::consts::PI - angle < LOG_PI_MARGIN {
        return Err(Error::IllConditionedLog { angle, margin: LOG_PI_MARGIN });
    }
    let rho = so3::left_jacobian_inv(&phi) * t.translation;
    Ok(TwistVector::new(rho, phi))
}

/// Left Jacobian of SE(3) in `(rho, phi)` ordering:
/// `exp(xi + d) ~= exp(J(xi) d) * exp(xi)` for small `d`.
pub fn se3_left_jacobian(xi: &TwistVector) -> Mat6 {
    let rho = xi.rho();
    let phi = xi.phi();
    let t = phi.norm();
    let j = so3::left_jacobian(&phi);
    let p = so3::hat(&phi);
    let r = so3::hat(&rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    let q = r * 0.5
        + (pr + rp + prp) * so3::coef_c(t)
        + (p * pr + rp * p - prp * 3.0) * so3::coef_e(t)
        + (prp * p + p * prp) * so3::coef_f(t);
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

/// `exp(rho * xi) * T0`.
pub fn gated_update(
    t0: &ExtrinsicTransform,
    xi: &TwistVector,
    rho: f64,
) -> Result<ExtrinsicTransform> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("gate rho = {rho} outside [0, 1]")));
    }
    Ok(se3_exp(&xi.scaled(rho))?.compose(t0))
}

/// SE3(q, t): rotation from the normalized quaternion, translation copied.
pub fn se3_from_quat_trans(q: &UnitQuaternion, t: &Vec3) -> Result<ExtrinsicTransform> {
    if !t.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("non-finite translation"));
    }
    let q = q.normalized()?;
    Ok(ExtrinsicTransform { rotation: q.to_rotation_matrix(), translation: *t })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub rot_deg: f64,
    pub trans_m: f64,
}

/// Geodesic rotation error (degrees) and Euclidean translation error (m).
///
/// The angle of `R_est * R_ref^T` is evaluated through atan2 of its sine and
/// cosine parts, which equals the clamped arccos of `(trace - 1) / 2` but
/// stays accurate near zero.
pub fn pose_errors(est: &ExtrinsicTransform, reference: &ExtrinsicTransform) -> PoseErrors {
    let rel = est.rotation * reference.rotation.transpose();
    PoseErrors {
        rot_deg: so3::angle(&rel).to_degrees(),
        trans_m: (est.translation - reference.translation).norm(),
    }
}
