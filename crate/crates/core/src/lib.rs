//! Radar-camera extrinsic alignment.
//!
//! The crate is organised around the data flow of an online calibration loop:
//!
//! - [`geometry`]: SE(3) exponential/logarithm, the confidence-gated update
//!   `T = exp(rho * xi) * T0`, pinhole projection and pose-error metrics.
//! - [`radar_density`]: Doppler-weighted range-azimuth splatting, temporal
//!   accumulation with persistence weighting and ego-motion compensation.
//! - [`projection`]: lifting detections onto a reference plane, projecting them
//!   through the extrinsic and splatting features into the image plane with
//!   kernel-mass normalization, plus analytic Jacobians w.r.t. the twist.
//! - [`crossmodal`]: a small bi-directional cross-attention stack with a
//!   refinement head and hand-written backward pass.
//! - [`objectives`]: auxiliary calibration, prior, smoothness and attention
//!   consistency losses with gradients.
//! - [`harness`]: synthetic scenes, miscalibration injection, descent-based
//!   recovery, sweeps and reports.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (default) and plain iterators otherwise.

pub mod crossmodal;
pub mod error;
pub mod floatgrid;
pub mod geometry;
pub mod harness;
pub mod objectives;
pub mod par;
pub mod projection;
pub mod radar_density;

pub use error::{Error, Result};
