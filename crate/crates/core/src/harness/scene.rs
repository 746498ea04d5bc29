use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{project_point, so3, CameraIntrinsics, ExtrinsicTransform, Mat3, Vec3};
use crate::radar_density::RadarDetection;
use crate::{Error, Result};

/// Scene generator settings. Distances in meters, angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    /// Feature-map subsampling relative to `intrinsics`.
    pub stride: usize,
    pub t_true: ExtrinsicTransform,
    pub reflector_count: usize,
    pub clutter_count: usize,
    pub frames: usize,
    pub dropout: f64,
    /// Per-detection planar position noise (std, m).
    pub jitter: f64,
    /// Reference-plane height in the radar frame.
    pub h0: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Full width of the azimuth sector.
    pub fov_deg: f64,
    pub reflector_doppler_max: f64,
    pub clutter_doppler_min: f64,
    pub clutter_doppler_max: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Blob width of the target raster, feature-map pixels.
    pub target_sigma: f64,
}

/// Radar `x` forward, `y` left, `z` up; camera `x` right, `y` down, `z`
/// forward; plus a small mounting rotation and offset.
pub fn default_t_true() -> ExtrinsicTransform {
    let axes = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let mount = so3::exp(&Vec3::new(0.02, -0.03, 0.01));
    ExtrinsicTransform::new(mount * axes, Vec3::new(0.1, 0.4, -0.2)).expect("rotation is orthonormal")
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            stride: 4,
            t_true: default_t_true(),
            reflector_count: 30,
            clutter_count: 30,
            frames: 5,
            dropout: 0.3,
            jitter: 0.3,
            h0: -0.5,
            r_min: 5.0,
            r_max: 100.0,
            fov_deg: 60.0,
            reflector_doppler_max: 0.5,
            clutter_doppler_min: 6.0,
            clutter_doppler_max: 12.0,
            intensity_min: 5.0,
            intensity_max: 50.0,
            target_sigma: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.reflector_count == 0 || self.frames == 0 || self.stride == 0 {
            return Err(Error::invalid("reflector_count, frames and stride must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.jitter < 0.0 || !self.jitter.is_finite() {
            return Err(Error::invalid("dropout must be in [0, 1) and jitter >= 0"));
        }
        if !(self.r_min > 0.0 && self.r_max > self.r_min) {
            return Err(Error::invalid("need 0 < r_min < r_max"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::invalid("fov_deg must be in (0, 180)"));
        }
        if !(self.clutter_doppler_min >= 0.0 && self.clutter_doppler_max >= self.clutter_doppler_min) {
            return Err(Error::invalid("clutter Doppler range is empty"));
        }
        if !(self.intensity_min >= 0.0 && self.intensity_max >= self.intensity_min) {
            return Err(Error::invalid("intensity range is empty"));
        }
        if !(self.target_sigma > 0.0) {
            return Err(Error::invalid("target_sigma must be positive"));
        }
        Ok(())
    }

    pub fn feature_intrinsics(&self) -> Result<CameraIntrinsics> {
        self.intrinsics.at_stride(self.stride)
    }
}

/// A static scatterer in the radar frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
    pub doppler: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub t_true: ExtrinsicTransform,
    pub reflectors: Vec<Scatterer>,
    pub clutter: Vec<Scatterer>,
    /// Chronological frames; reflectors first, then clutter, in each frame.
    pub frames: Vec<Vec<RadarDetection>>,
    /// Number of frames each clutter point appears in.
    pub clutter_presence: Vec<usize>,
    /// Occupancy raster at feature-map resolution.
    pub target_raster: Array2<f64>,
}

impl SyntheticScene {
    pub fn detections(&self) -> Vec<RadarDetection> {
        self.frames.iter().flatten().copied().collect()
    }

    pub fn reflector_points(&self) -> Vec<Vec3> {
        self.reflectors.iter().map(|r| Vec3::new(r.x, r.y, self.spec.h0)).collect()
    }
}

fn to_detection(x: f64, y: f64, s: &Scatterer, frame: usize) -> Result<RadarDetection> {
    RadarDetection::new(x.hypot(y), y.atan2(x), s.doppler, s.intensity, frame as i64)
}

fn render_target(points: &[(f64, f64)], k: &CameraIntrinsics, sigma: f64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((k.height, k.width));
    let reach = (4.0 * sigma).ceil() as i64;
    for &(u, v) in points {
        let (x0, y0) = (u.round() as i64, v.round() as i64);
        for y in (y0 - reach).max(0)..=(y0 + reach).min(k.height as i64 - 1) {
            for x in (x0 - reach).max(0)..=(x0 + reach).min(k.width as i64 - 1) {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                let cell = &mut out[(y as usize, x as usize)];
                *cell += g;
            }
        }
    }
    out
}

const MAX_DRAWS_PER_REFLECTOR: usize = 1000;

/// Deterministic synthetic scene for `seed`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = spec.fov_deg.to_radians() / 2.0;
    let k = spec.intrinsics;
    let kf = spec.feature_intrinsics()?;
    let (w, h) = (k.width as f64, k.height as f64);
    let sample_pos = |rng: &mut ChaCha8Rng| {
        let r = rng.random_range(spec.r_min..spec.r_max);
        let az = rng.random_range(-half..half);
        (r * az.cos(), r * az.sin())
    };
    let intensity = |rng: &mut ChaCha8Rng| {
        if spec.intensity_max > spec.intensity_min {
            rng.random_range(spec.intensity_min..spec.intensity_max)
        } else {
            spec.intensity_min
        }
    };

    let mut reflectors = Vec::with_capacity(spec.reflector_count);
    let mut target_uv = Vec::with_capacity(spec.reflector_count);
    for i in 0..spec.reflector_count {
        let mut found = None;
        for _ in 0..MAX_DRAWS_PER_REFLECTOR {
            let (x, y) = sample_pos(&mut rng);
            let p = project_point(&k, &spec.t_true, &Vec3::new(x, y, spec.h0));
            if p.in_front && (0.0..=w - 1.0).contains(&p.u) && (0.0..=h - 1.0).contains(&p.v) {
                found = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = found else {
            return Err(Error::invalid(format!("reflector {i}: no visible position in the sector under t_true")));
        };
        let pf = project_point(&kf, &spec.t_true, &Vec3::new(x, y, spec.h0));
        target_uv.push((pf.u, pf.v));
        let doppler = rng.random_range(-spec.reflector_doppler_max..=spec.reflector_doppler_max);
        reflectors.push(Scatterer { x, y, intensity: intensity(&mut rng), doppler });
    }

    let max_presence = (spec.frames - 1) / 2;
    let mut clutter = Vec::with_capacity(spec.clutter_count);
    let mut clutter_frames = Vec::with_capacity(spec.clutter_count);
    for _ in 0..spec.clutter_count {
        let (x, y) = sample_pos(&mut rng);
        let speed = rng.random_range(spec.clutter_doppler_min..=spec.clutter_doppler_max);
        let doppler = if rng.random_bool(0.5) { speed } else { -speed };
        clutter.push(Scatterer { x, y, intensity: intensity(&mut rng), doppler });
        let n = if max_presence == 0 { 0 } else { rng.random_range(1..=max_presence) };
        let idx = rand::seq::index::sample(&mut rng, spec.frames, n).into_vec();
        clutter_frames.push(idx);
    }

    let jitter = Normal::new(0.0, spec.jitter.max(f64::MIN_POSITIVE)).map_err(|e| Error::invalid(e.to_string()))?;
    let draw_jitter = |rng: &mut ChaCha8Rng| if spec.jitter > 0.0 { jitter.sample(rng) } else { 0.0 };
    let mut frames = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let mut dets = Vec::new();
        for r in &reflectors {
            if spec.dropout > 0.0 && rng.random_bool(spec.dropout) {
                continue;
            }
            let (dx, dy) = (draw_jitter(&mut rng), draw_jitter(&mut rng));
            dets.push(to_detection(r.x + dx, r.y + dy, r, f)?);
        }
        for (c, present) in clutter.iter().zip(&clutter_frames) {
            if present.contains(&f) {
                let (dx, dy) = (draw_jitter(&mut rng), draw_jitter(&mut rng));
                dets.push(to_detection(c.x + dx, c.y + dy, c, f)?);
            }
        }
        frames.push(dets);
    }

    Ok(SyntheticScene {
        spec: spec.clone(),
        t_true: spec.t_true,
        reflectors,
        clutter,
        frames,
        clutter_presence: clutter_frames.iter().map(Vec::len).collect(),
        target_raster: render_target(&target_uv, &kf, spec.target_sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_density::{detection_weight, DensityParams};

    #[test]
    fn deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 42).unwrap();
        let b = generate_scene(&spec, 42).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.target_raster, b.target_raster);
        let c = generate_scene(&spec, 43).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn clean_counts() {
        let spec = SceneSpec { clutter_count: 0, dropout: 0.0, ..Default::default() };
        let s = generate_scene(&spec, 1).unwrap();
        assert!(s.frames.iter().all(|f| f.len() == spec.reflector_count));
        assert!(s.target_raster.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn population_properties() {
        let spec = SceneSpec::default();
        let params = DensityParams::default();
        let s = generate_scene(&spec, 5).unwrap();
        assert!(s.reflectors.iter().all(|r| r.doppler.abs() <= 0.5));
        assert!(s.clutter.iter().all(|c| c.doppler.abs() >= 3.0 * params.sigma_v));
        assert!(s.clutter_presence.iter().all(|&n| (n as f64) < spec.frames as f64 / 2.0));
        for r in s.reflector_points() {
            let p = project_point(&spec.intrinsics, &spec.t_true, &r);
            assert!(p.in_front && p.u >= 0.0 && p.u <= 639.0 && p.v >= 0.0 && p.v <= 479.0);
        }
        let mean = |v: &[RadarDetection]| v.iter().map(|d| detection_weight(d, &params)).sum::<f64>() / v.len() as f64;
        let dets = s.detections();
        let (refl, clut): (Vec<_>, Vec<_>) = dets.iter().partition(|d| d.doppler.abs() <= 0.5);
        assert!(!clut.is_empty());
        assert!(mean(&clut) < mean(&refl));
    }
}
