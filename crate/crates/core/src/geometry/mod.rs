//! Rigid-body geometry for the radar-to-camera extrinsic.
//!
//! Twists are stored as `(rho, phi)`: translation part first, rotation part
//! second. Updates compose on the left, `exp(xi) * T`.

mod camera;
mod quaternion;
mod record;
mod se3;
pub mod so3;

pub use camera::{project_point, project_point_with, CameraIntrinsics, Projection, DEFAULT_Z_MIN};
pub use quaternion::{UnitQuaternion, QUAT_EPS};
pub use record::{parse_transform_record, transform_to_matrix_record, transform_to_quat_record};
pub use se3::{
    gated_update, pose_errors, se3_exp, se3_from_quat_trans, se3_left_jacobian, se3_log,
    ExtrinsicTransform, PoseErrors, TwistVector, LOG_PI_MARGIN,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec6 = nalgebra::Vector6<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
