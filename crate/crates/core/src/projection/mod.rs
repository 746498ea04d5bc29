//! Calibration-conditioned projection of radar detections into the image
//! plane.
//!
//! Detections are lifted onto the reference plane `z = h0` of the radar frame,
//! mapped through the extrinsic and the pinhole model, then splatted with the
//! separable tent kernel `max(0, 1 - |du|) * max(0, 1 - |dv|)`. Accumulated
//! features are divided by the accumulated kernel mass plus [`SPLAT_EPS`].
//!
//! [`splat_jacobian`] differentiates the splatted maps w.r.t. the twist of the
//! gated update `T = exp(rho * xi) * T0`. The tent kernel is not differentiable
//! on integer pixel offsets; there the average of the one-sided slopes is used
//! and the affected pixels are flagged as degenerate.

mod embed;
mod jacobian;
mod loss;
mod splat;

pub use embed::{embed_feature, DefaultEmbedding, FeatureEmbedding, WeightEmbedding};
pub use jacobian::{point_jacobian, splat_jacobian, tent_and_slope, PixelJacobian, SplatJacobian};
pub use loss::{alignment_loss, AlignmentLoss, MapSource};
pub use splat::{
    lift_detection, lift_detections, project_batch, splat_image_plane, LiftedPoint, MapSpec,
    ProjectedPoint, SplattedFeatureMap, SPLAT_EPS,
};
