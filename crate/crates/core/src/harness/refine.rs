use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use crate::geometry::{se3_exp, CameraIntrinsics, ExtrinsicTransform, TwistVector, Vec3, DEFAULT_Z_MIN};
use crate::projection::{
    alignment_loss, lift_detections, point_jacobian, project_batch, splat_jacobian, DefaultEmbedding,
    LiftedPoint, MapSource, MapSpec, SplattedFeatureMap, WeightEmbedding, splat_image_plane,
};
use crate::radar_density::{gaussian_blur, DensityParams};
use crate::{Error, Result};

/// First-order descent settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentOptions {
    /// Total trial evaluations over all stages.
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Smoothing applied to both rasters, coarse to fine (feature-map pixels).
    pub sigmas: Vec<f64>,
    /// Initial step of each stage as a multiple of its sigma. Steps are RMS
    /// image motion in feature-map pixels.
    pub initial_step: f64,
    /// A stage ends once the step (pixels) falls below this.
    pub min_step: f64,
    pub grow: f64,
    /// Measure steps in the pixel-motion metric `mean(J^T J)` of the
    /// projected points instead of the raw twist norm.
    pub precondition: bool,
    /// Relative ridge added to the metric.
    pub damping: f64,
    /// Leading stages that only move the rotation part of the twist.
    pub rotation_only_stages: usize,
    pub map_source: MapSource,
    pub channel: usize,
    pub z_min: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-8,
            sigmas: vec![16.0, 8.0, 4.0, 2.0, 1.0],
            initial_step: 0.5,
            min_step: 1e-5,
            grow: 1.5,
            precondition: true,
            damping: 1e-3,
            rotation_only_stages: 2,
            map_source: MapSource::Accumulated,
            channel: 0,
            z_min: DEFAULT_Z_MIN,
        }
    }
}

impl DescentOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigmas must be a non-empty list of finite values >= 0"));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0 && self.grow >= 1.0 && self.damping >= 0.0) {
            return Err(Error::invalid("need initial_step > 0, min_step > 0, grow >= 1, damping >= 0"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::invalid("grad_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub sigma: f64,
    /// Loss at the stage start followed by the loss after each accepted step.
    pub losses: Vec<f64>,
}

impl StageTrace {
    pub fn is_non_increasing(&self) -> bool {
        self.losses.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub transform: ExtrinsicTransform,
    pub xi: [f64; 6],
    pub stages: Vec<StageTrace>,
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl RefineOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.losses.last().copied())
    }
}

/// Alignment objective at one smoothing level, around a fixed `T0`.
pub struct Objective<'a> {
    pub points: &'a [LiftedPoint],
    pub k: CameraIntrinsics,
    pub t0: ExtrinsicTransform,
    pub spec: MapSpec,
    pub target: Array2<f64>,
    pub sigma: f64,
    pub source: MapSource,
    pub channel: usize,
    pub z_min: f64,
}

impl Objective<'_> {
    /// Loss and gradient w.r.t. `xi` of `-NCC(G * map(exp(xi) T0), G * target)`.
    pub fn eval(&self, xi: &TwistVector) -> Result<(f64, [f64; 6])> {
        let (map, jac) = splat_jacobian(self.points, &self.k, &self.t0, xi, 1.0, self.spec, self.z_min)?;
        let raw = self.source.channel(&map, self.channel);
        let smoothed = if self.sigma > 0.0 { gaussian_blur(&raw, self.sigma) } else { raw };
        let al = alignment_loss(&smoothed, &self.target)?;
        // the zero-padded blur is symmetric, so its adjoint is itself
        let dl = if self.sigma > 0.0 { gaussian_blur(&al.grad, self.sigma) } else { al.grad };
        Ok((al.loss, jac.contract(self.source, self.channel, &dl)))
    }
}

pub fn scene_points(scene: &SyntheticScene, params: &DensityParams) -> Vec<LiftedPoint> {
    let psi = WeightEmbedding(DefaultEmbedding::new(*params, scene.spec.r_max));
    lift_detections(&scene.detections(), scene.spec.h0, &psi)
}

/// Splats the scene's weight embedding onto the feature map under `t`.
pub fn splat_scene(
    scene: &SyntheticScene,
    t: &ExtrinsicTransform,
    params: &DensityParams,
    z_min: f64,
) -> Result<SplattedFeatureMap> {
    let points = scene_points(scene, params);
    let k = scene.spec.feature_intrinsics()?;
    let projected = project_batch(&points, &k, t, z_min);
    let features: Vec<&[f64]> = points.iter().map(|p| p.feature.as_slice()).collect();
    let channels = points.first().map_or(5, |p| p.feature.len());
    splat_image_plane(&projected, &features, MapSpec::from_intrinsics(&k, channels))
}

/// Minimizes the smoothed alignment loss over `xi` in `T = exp(xi) * T0` by
/// normalized gradient steps with backtracking, one stage per smoothing
/// level. Within a stage every accepted step strictly lowers the loss.
pub fn refine_descent(
    scene: &SyntheticScene,
    t0: &ExtrinsicTransform,
    params: &DensityParams,
    opts: &DescentOptions,
) -> Result<RefineOutcome> {
    opts.validate()?;
    let k = scene.spec.feature_intrinsics()?;
    let points = scene_points(scene, params);
    let spec = MapSpec::from_intrinsics(&k, 5);
    if opts.channel >= spec.channels {
        return Err(Error::invalid(format!("channel {} out of range", opts.channel)));
    }
    let mut out = RefineOutcome {
        transform: *t0,
        xi: [0.0; 6],
        stages: Vec::new(),
        iterations: 0,
        accepted: 0,
        rejected: 0,
        converged: false,
        diagnostic: None,
    };

    let Some(metric) = motion_metric(&points, &k, t0, opts) else {
        out.diagnostic = Some("no visible detections at the initial transform".into());
        return Ok(out);
    };

    let mut xi = [0.0; 6];
    let mut ended_by_budget = false;
    for (stage, &sigma) in opts.sigmas.iter().enumerate() {
        let rotation_only = stage < opts.rotation_only_stages;
        let target = if sigma > 0.0 { gaussian_blur(&scene.target_raster, sigma) } else { scene.target_raster.clone() };
        let obj = Objective {
            points: &points,
            k,
            t0: *t0,
            spec,
            target,
            sigma,
            source: opts.map_source,
            channel: opts.channel,
            z_min: opts.z_min,
        };
        let (mut loss, mut grad) = obj.eval(&TwistVector::from_slice(&xi))?;
        let mut trace = StageTrace { sigma, losses: vec![loss] };
        let mut step = opts.initial_step * sigma.max(1.0);
        loop {
            if out.iterations >= opts.max_iters {
                ended_by_budget = true;
                break;
            }
            let first = if rotation_only { 3 } else { 0 };
            let gnorm = grad[first..].iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < opts.grad_tol || step < opts.min_step {
                break;
            }
            let dir = metric.direction(&grad, rotation_only);
            let mut trial = xi;
            for i in 0..6 {
                trial[i] += step * dir[i];
            }
            out.iterations += 1;
            let (tl, tg) = obj.eval(&TwistVector::from_slice(&trial))?;
            if tl < loss {
                xi = trial;
                loss = tl;
                grad = tg;
                trace.losses.push(loss);
                out.accepted += 1;
                step *= opts.grow;
            } else {
                out.rejected += 1;
                step *= 0.5;
            }
        }
        log::debug!("stage sigma={sigma}: loss {:.6} -> {:.6}", trace.losses[0], loss);
        out.stages.push(trace);
        if ended_by_budget {
            break;
        }
    }
    out.xi = xi;
    out.transform = se3_exp(&TwistVector::from_slice(&xi))?.compose(t0);
    out.converged = !ended_by_budget;
    if ended_by_budget {
        out.diagnostic = Some(format!("iteration budget {} exhausted", opts.max_iters));
    }
    Ok(out)
}

/// Step geometry: `d = -M^-1 g`, scaled to unit length in the `M` norm, so
/// a step of size `s` moves the projected points by `s` pixels RMS.
struct Metric {
    precondition: bool,
    m: nalgebra::Matrix6<f64>,
}

impl Metric {
    fn direction(&self, g: &[f64; 6], rotation_only: bool) -> [f64; 6] {
        let first = if rotation_only { 3 } else { 0 };
        let n = 6 - first;
        let gs = nalgebra::DVector::from_column_slice(&g[first..]);
        let ms = self.m.view((first, first), (n, n)).clone_owned();
        let ds = if self.precondition {
            ms.clone().try_inverse().map(|inv| -(inv * &gs)).unwrap_or(-&gs)
        } else {
            -&gs
        };
        let mut d = nalgebra::Vector6::zeros();
        d.rows_mut(first, n).copy_from(&ds);
        let n = d.dot(&(self.m * d)).sqrt();
        let mut out = [0.0; 6];
        if n > 0.0 {
            for i in 0..6 {
                out[i] = d[i] / n;
            }
        }
        out
    }
}

/// Feature-weighted mean of `J^T J` over the visible points at `t0`.
fn motion_metric(points: &[LiftedPoint], k: &CameraIntrinsics, t0: &ExtrinsicTransform, opts: &DescentOptions) -> Option<Metric> {
    let projected = project_batch(points, k, t0, opts.z_min);
    let mut m = nalgebra::Matrix6::<f64>::zeros();
    let mut wsum = 0.0;
    for (p, pr) in points.iter().zip(&projected) {
        if !pr.visible {
            continue;
        }
        let Some((_, _, j)) = point_jacobian(k, t0, &TwistVector::zero(), 1.0, &p.position, opts.z_min) else {
            continue;
        };
        let w = p.feature.get(opts.channel).copied().unwrap_or(1.0).max(0.0);
        for r in &j {
            let row = nalgebra::Vector6::from_column_slice(r);
            m += row * row.transpose() * w;
        }
        wsum += w;
    }
    if wsum <= 0.0 {
        return None;
    }
    // two image axes per point
    m /= 2.0 * wsum;
    let ridge = opts.damping * m.trace() / 6.0;
    Some(Metric { precondition: opts.precondition, m: m + nalgebra::Matrix6::identity() * ridge })
}

pub const AXIS_NAMES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

/// Singular values of the stacked per-point projection Jacobians
/// `d(u, v) / d xi` at `t`. Translation columns are multiplied by
/// `translation_scale` (meters per radian of rotation) so that rotation and
/// translation are compared on a chosen footing; 1 compares 1 m with 1 rad.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditioningReport {
    /// Descending.
    pub singular_values: [f64; 6],
    /// Right singular vector of the smallest singular value.
    pub weakest_direction: [f64; 6],
    pub weakest_axis: String,
    /// RMS pixel motion per unit of each axis (scaled for translation).
    pub axis_sensitivity: [f64; 6],
    pub translation_scale: f64,
    pub points: usize,
}

pub fn conditioning_report(
    points: &[Vec3],
    k: &CameraIntrinsics,
    t: &ExtrinsicTransform,
    z_min: f64,
    translation_scale: f64,
) -> Result<ConditioningReport> {
    if !(translation_scale > 0.0) {
        return Err(Error::invalid("translation_scale must be positive"));
    }
    let mut rows = Vec::new();
    for p in points {
        if let Some((_, _, j)) = point_jacobian(k, t, &TwistVector::zero(), 1.0, p, z_min) {
            rows.push(j[0]);
            rows.push(j[1]);
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("no point in front of the camera"));
    }
    let scale = |c: usize| if c < 3 { translation_scale } else { 1.0 };
    let m = nalgebra::DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c] * scale(c));
    let n = rows.len() / 2;
    let axis_sensitivity: [f64; 6] = std::array::from_fn(|c| m.column(c).norm() / (n as f64).sqrt());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::invalid("SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut sv = [0.0; 6];
    for (i, &o) in order.iter().enumerate().take(6) {
        sv[i] = svd.singular_values[o];
    }
    let last = *order.last().unwrap();
    let weakest: [f64; 6] = std::array::from_fn(|c| v_t[(last, c)]);
    let axis = (0..6).max_by(|&a, &b| weakest[a].abs().total_cmp(&weakest[b].abs())).unwrap();
    Ok(ConditioningReport {
        singular_values: sv,
        weakest_direction: weakest,
        weakest_axis: AXIS_NAMES[axis].to_string(),
        axis_sensitivity,
        translation_scale,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_errors;
    use crate::harness::{generate_scene, inject_miscalibration, Axis, SceneSpec};

    fn clean() -> SceneSpec {
        SceneSpec { clutter_count: 0, jitter: 0.0, ..Default::default() }
    }

    #[test]
    fn zero_perturbation_stays_put() {
        let scene = generate_scene(&clean(), 2).unwrap();
        let out = refine_descent(&scene, &scene.t_true, &DensityParams::default(), &DescentOptions::default()).unwrap();
        let e = pose_errors(&out.transform, &scene.t_true);
        assert!(out.converged);
        assert!(e.rot_deg < 0.1 && e.trans_m < 0.05, "{e:?}");
    }

    #[test]
    fn yaw_offset_recovered_and_grid_search_agrees() {
        let spec = SceneSpec { clutter_count: 0, ..Default::default() };
        let scene = generate_scene(&spec, 3).unwrap();
        let t0 = inject_miscalibration(&scene.t_true, &Axis::Ry.twist(5.0)).unwrap();
        let params = DensityParams::default();
        let opts = DescentOptions::default();
        let out = refine_descent(&scene, &t0, &params, &opts).unwrap();
        assert!(out.stages.iter().all(StageTrace::is_non_increasing));
        assert!(pose_errors(&out.transform, &scene.t_true).rot_deg < 0.5);

        // 1-D yaw scan of the finest-stage objective around the truth
        let points = scene_points(&scene, &params);
        let k = scene.spec.feature_intrinsics().unwrap();
        let sigma = *opts.sigmas.last().unwrap();
        let obj = Objective {
            points: &points,
            k,
            t0: scene.t_true,
            spec: MapSpec::from_intrinsics(&k, 5),
            target: gaussian_blur(&scene.target_raster, sigma),
            sigma,
            source: MapSource::Accumulated,
            channel: 0,
            z_min: opts.z_min,
        };
        let best = (-40..=40)
            .map(|i| i as f64 * 0.05)
            .map(|deg| (deg, obj.eval(&Axis::Ry.twist(deg)).unwrap().0))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(best.0.abs() <= 0.5, "grid minimum at {} deg", best.0);
    }

    #[test]
    fn conditioning_flags_a_translation_axis() {
        let scene = generate_scene(&clean(), 4).unwrap();
        let k = scene.spec.feature_intrinsics().unwrap();
        let r = conditioning_report(&scene.reflector_points(), &k, &scene.t_true, DEFAULT_Z_MIN, 1.0).unwrap();
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.weakest_axis.starts_with('t'), "{r:?}");
        // lateral motion is the best-observed translation
        assert!(r.axis_sensitivity[0] > r.axis_sensitivity[2]);

        let t0 = inject_miscalibration(&scene.t_true, &Axis::Ty.twist(0.2)).unwrap();
        let out = refine_descent(&scene, &t0, &DensityParams::default(), &DescentOptions::default()).unwrap();
        assert!(out.stages.iter().all(StageTrace::is_non_increasing));
    }

    #[test]
    fn nothing_visible_is_reported() {
        let scene = generate_scene(&clean(), 5).unwrap();
        let away = inject_miscalibration(&scene.t_true, &Axis::Ry.twist(180.0)).unwrap();
        let out = refine_descent(&scene, &away, &DensityParams::default(), &DescentOptions::default()).unwrap();
        assert!(!out.converged);
        assert!(out.diagnostic.unwrap().contains("no visible"));
        assert_eq!(out.transform, away);
    }
}
