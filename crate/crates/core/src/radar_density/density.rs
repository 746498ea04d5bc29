use ndarray::Array2;

use super::{
    gaussian_blur, wrap_angle, DensityParams, FrequencyMap, GridSpec, PersistenceMode,
    RAGrid, RadarDetection,
};
use crate::geometry::{ExtrinsicTransform, Vec3};
use crate::{par, Error, Result};

/// Denominator guard of the min-max normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Standardized log intensity clipped to [0, 1].
pub fn intensity_weight(intensity: f64, params: &DensityParams) -> f64 {
    ((intensity.ln_1p() - params.mu_s) / params.sigma_s).clamp(0.0, 1.0)
}

/// Gaussian Doppler gate; identically 1 when gating is disabled.
pub fn doppler_weight(doppler: f64, params: &DensityParams) -> f64 {
    if params.doppler_gate {
        (-doppler * doppler / (2.0 * params.sigma_v * params.sigma_v)).exp()
    } else {
        1.0
    }
}

pub fn detection_weight(det: &RadarDetection, params: &DensityParams) -> f64 {
    intensity_weight(det.intensity, params) * doppler_weight(det.doppler, params)
}

#[derive(Clone, Debug)]
pub struct FrameSplat {
    pub grid: RAGrid,
    /// Detections outside `[0, r_max] x [az_min, az_max]`.
    pub out_of_bounds: usize,
}

/// Bilinear soft splatting of weighted detections onto the grid.
pub fn splat_frame(dets: &[RadarDetection], spec: &GridSpec, params: &DensityParams) -> FrameSplat {
    let mut grid = RAGrid::zeros(*spec);
    let mut out_of_bounds = 0;
    for det in dets {
        if !spec.contains(det.range, det.azimuth) {
            out_of_bounds += 1;
            continue;
        }
        let w = detection_weight(det, params);
        let (fi, fj) = spec.to_cell(det.range, det.azimuth);
        let i0 = (fi.floor() as usize).min(spec.n_range - 2);
        let j0 = (fj.floor() as usize).min(spec.n_azimuth - 2);
        let a = fi - i0 as f64;
        let b = fj - j0 as f64;
        let v = &mut grid.values;
        v[(i0, j0)] += w * (1.0 - a) * (1.0 - b);
        v[(i0 + 1, j0)] += w * a * (1.0 - b);
        v[(i0, j0 + 1)] += w * (1.0 - a) * b;
        v[(i0 + 1, j0 + 1)] += w * a * b;
    }
    FrameSplat { grid, out_of_bounds }
}

#[derive(Clone, Debug)]
pub struct EgoCompensated {
    pub detections: Vec<RadarDetection>,
    /// Detections whose transformed planar position collapsed onto the origin.
    pub dropped: usize,
}

/// Moves past-frame detections into the current frame. `t_ego` is the pose of
/// the past frame expressed in the current one; detections are lifted to
/// `(r cos theta, r sin theta, h0)` first. Doppler and intensity are carried
/// through unchanged.
pub fn ego_compensate(dets: &[RadarDetection], t_ego: &ExtrinsicTransform, h0: f64) -> EgoCompensated {
    let mut out = Vec::with_capacity(dets.len());
    let mut dropped = 0;
    for det in dets {
        let (x, y) = det.planar();
        let p = t_ego.transform_point(&Vec3::new(x, y, h0));
        let r = p.x.hypot(p.y);
        if r < 1e-12 {
            dropped += 1;
            continue;
        }
        out.push(RadarDetection { range: r, azimuth: wrap_angle(p.y.atan2(p.x)), ..*det });
    }
    EgoCompensated { detections: out, dropped }
}

/// `alpha_k = gamma^k / sum_j gamma^j` for `k = 0..n`, newest frame first.
pub fn window_weights(gamma: f64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|k| gamma.powi(k as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Blurs each frame and mixes them with decaying weights. `frames` are in
/// chronological order; the last one is the current frame and receives
/// `alpha_0`.
pub fn accumulate_window(frames: &[RAGrid], params: &DensityParams) -> Result<RAGrid> {
    params.validate()?;
    let Some(first) = frames.first() else {
        return Err(Error::invalid("accumulation window is empty"));
    };
    if frames.len() > params.window {
        return Err(Error::invalid(format!(
            "{} frames exceed the window length {}",
            frames.len(),
            params.window
        )));
    }
    if frames.iter().any(|f| f.spec != first.spec) {
        return Err(Error::invalid("frames in the window use different grid specs"));
    }
    let alphas = window_weights(params.gamma, frames.len());
    let blurred = par::map(frames, |f| gaussian_blur(&f.values, params.sigma_g));
    let mut acc = Array2::<f64>::zeros(first.spec.shape());
    // Fixed order: oldest to newest.
    for (idx, b) in blurred.iter().enumerate() {
        let age = frames.len() - 1 - idx;
        acc.scaled_add(alphas[age], b);
    }
    Ok(RAGrid { spec: first.spec, values: acc })
}

/// Persistence-weighted, min-max normalized density and the occupancy counts
/// it was built from. Counts use the unblurred frames.
pub fn persistence_combine(
    d_tilde: &RAGrid,
    frames: &[RAGrid],
    params: &DensityParams,
) -> Result<(RAGrid, FrequencyMap)> {
    if frames.iter().any(|f| f.spec != d_tilde.spec) {
        return Err(Error::invalid("frames and aggregate use different grid specs"));
    }
    let mut counts = Array2::<u32>::zeros(d_tilde.spec.shape());
    for f in frames {
        ndarray::Zip::from(&mut counts)
            .and(&f.values)
            .for_each(|c, &v| *c += u32::from(v > params.epsilon));
    }
    let n = params.window as f64;
    let weighted = ndarray::Zip::from(&d_tilde.values)
        .and(&counts)
        .map_collect(|&d, &c| {
            let g = match params.persistence {
                PersistenceMode::Log => (c as f64).ln_1p(),
                PersistenceMode::Power { kappa } => (c as f64 / n).powf(kappa),
            };
            d * g
        });
    let lo = weighted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = weighted.mapv(|x| (x - lo) / (hi - lo + NORM_EPS));
    Ok((RAGrid { spec: d_tilde.spec, values }, FrequencyMap { counts }))
}

#[derive(Clone, Debug)]
pub struct DensityOutput {
    pub density: RAGrid,
    pub frequency: FrequencyMap,
    pub out_of_bounds: usize,
    pub ego_dropped: usize,
}

/// Full pipeline over the most recent `params.window` frames (chronological).
/// `ego_poses[k]`, when given, maps frame `k` into the current frame.
pub fn build_density(
    frames: &[Vec<RadarDetection>],
    ego_poses: Option<&[ExtrinsicTransform]>,
    spec: &GridSpec,
    params: &DensityParams,
    h0: f64,
) -> Result<DensityOutput> {
    spec.validate()?;
    params.validate()?;
    if let Some(p) = ego_poses {
        if p.len() != frames.len() {
            return Err(Error::invalid("one ego pose per frame is required"));
        }
    }
    if frames.is_empty() {
        return Err(Error::invalid("no frames"));
    }
    let start = frames.len().saturating_sub(params.window);
    let idx: Vec<usize> = (start..frames.len()).collect();
    let splats = par::map(&idx, |&k| {
        let (dets, dropped) = match ego_poses {
            Some(p) => {
                let c = ego_compensate(&frames[k], &p[k], h0);
                (c.detections, c.dropped)
            }
            None => (frames[k].clone(), 0),
        };
        (splat_frame(&dets, spec, params), dropped)
    });
    let out_of_bounds = splats.iter().map(|(s, _)| s.out_of_bounds).sum();
    let ego_dropped = splats.iter().map(|(_, d)| d).sum();
    let grids: Vec<RAGrid> = splats.into_iter().map(|(s, _)| s.grid).collect();
    let d_tilde = accumulate_window(&grids, params)?;
    let (density, frequency) = persistence_combine(&d_tilde, &grids, params)?;
    Ok(DensityOutput { density, frequency, out_of_bounds, ego_dropped })
}
