use ndarray::{Array2, Array3};

use super::FeatureEmbedding;
use crate::geometry::{project_point_with, CameraIntrinsics, ExtrinsicTransform, Vec3};
use crate::radar_density::RadarDetection;
use crate::{par, Error, Result};

/// Mass-normalization guard.
pub const SPLAT_EPS: f64 = 1e-8;

/// Rows per reduction tile. Each tile owns its rows, so accumulation order
/// per pixel is the detection order whatever the thread count.
const TILE_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPoint {
    pub position: Vec3,
    pub feature: Vec<f64>,
    pub source_index: usize,
}

/// `(r cos theta, r sin theta, h0)` in the radar frame.
pub fn lift_detection(det: &RadarDetection, h0: f64) -> Vec3 {
    let (x, y) = det.planar();
    Vec3::new(x, y, h0)
}

pub fn lift_detections(dets: &[RadarDetection], h0: f64, psi: &dyn FeatureEmbedding) -> Vec<LiftedPoint> {
    dets.iter()
        .enumerate()
        .map(|(i, d)| LiftedPoint { position: lift_detection(d, h0), feature: psi.embed(d), source_index: i })
        .collect()
}

/// Feature-map raster size and channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl MapSpec {
    pub fn from_intrinsics(k: &CameraIntrinsics, channels: usize) -> Self {
        Self { width: k.width, height: k.height, channels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub z_cam: f64,
    pub visible: bool,
}

/// Projects lifted points; a point is visible when it is in front of the
/// cull plane and inside `[-1, W] x [-1, H]` (one-pixel apron).
pub fn project_batch(
    points: &[LiftedPoint],
    k: &CameraIntrinsics,
    t: &ExtrinsicTransform,
    z_min: f64,
) -> Vec<ProjectedPoint> {
    par::map(points, |p| {
        let pr = project_point_with(k, t, &p.position, z_min);
        let visible = pr.in_front
            && (-1.0..=k.width as f64).contains(&pr.u)
            && (-1.0..=k.height as f64).contains(&pr.v);
        ProjectedPoint { u: pr.u, v: pr.v, z_cam: pr.z_cam, visible }
    })
}

/// Accumulated features `R`, kernel mass `Gamma` and `R / (Gamma + eps)`.
/// Feature arrays are laid out `(channel, row, column)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplattedFeatureMap {
    pub spec: MapSpec,
    pub accum: Array3<f64>,
    pub mass: Array2<f64>,
    pub normalized: Array3<f64>,
}

impl SplattedFeatureMap {
    pub fn zeros(spec: MapSpec) -> Self {
        let shape = (spec.channels, spec.height, spec.width);
        Self {
            spec,
            accum: Array3::zeros(shape),
            mass: Array2::zeros((spec.height, spec.width)),
            normalized: Array3::zeros(shape),
        }
    }
}

/// Bilinear weights of a point at `(u, v)`: base pixel and fractional parts.
pub(crate) fn bilinear_support(u: f64, v: f64) -> (i64, i64, f64, f64) {
    let x0 = u.floor();
    let y0 = v.floor();
    (x0 as i64, y0 as i64, u - x0, v - y0)
}

pub fn splat_image_plane(
    projected: &[ProjectedPoint],
    features: &[&[f64]],
    spec: MapSpec,
) -> Result<SplattedFeatureMap> {
    if projected.len() != features.len() {
        return Err(Error::invalid("one feature vector per projected point is required"));
    }
    if let Some(f) = features.iter().find(|f| f.len() != spec.channels) {
        return Err(Error::invalid(format!("feature has {} channels, map expects {}", f.len(), spec.channels)));
    }
    let (w, h, c) = (spec.width, spec.height, spec.channels);
    let n_tiles = h.div_ceil(TILE_ROWS);

    // Bucket points by the tiles their two kernel rows fall in, in detection order.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_tiles];
    for (k, p) in projected.iter().enumerate() {
        if !p.visible {
            continue;
        }
        let (_, y0, _, _) = bilinear_support(p.u, p.v);
        let mut last = usize::MAX;
        for y in [y0, y0 + 1] {
            if (0..h as i64).contains(&y) {
                let tile = y as usize / TILE_ROWS;
                if tile != last {
                    buckets[tile].push(k);
                    last = tile;
                }
            }
        }
    }

    let tiles = par::map_range(n_tiles, |tile| {
        let row0 = tile * TILE_ROWS;
        let rows = TILE_ROWS.min(h - row0);
        let mut mass = Array2::<f64>::zeros((rows, w));
        let mut accum = Array3::<f64>::zeros((c, rows, w));
        for &k in &buckets[tile] {
            let p = &projected[k];
            let (x0, y0, ax, ay) = bilinear_support(p.u, p.v);
            for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
                let y = y0 + dy;
                if y < row0 as i64 || y >= (row0 + rows) as i64 {
                    continue;
                }
                let ly = (y - row0 as i64) as usize;
                for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                    let x = x0 + dx;
                    if x < 0 || x >= w as i64 {
                        continue;
                    }
                    let kw = wx * wy;
                    mass[(ly, x as usize)] += kw;
                    for (ch, f) in features[k].iter().enumerate() {
                        accum[(ch, ly, x as usize)] += kw * f;
                    }
                }
            }
        }
        (mass, accum)
    });

    let mut out = SplattedFeatureMap::zeros(spec);
    for (tile, (mass, accum)) in tiles.into_iter().enumerate() {
        let row0 = tile * TILE_ROWS;
        let rows = mass.nrows();
        out.mass.slice_mut(ndarray::s![row0..row0 + rows, ..]).assign(&mass);
        out.accum.slice_mut(ndarray::s![.., row0..row0 + rows, ..]).assign(&accum);
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.normalized[(ch, y, x)] = out.accum[(ch, y, x)] / (out.mass[(y, x)] + SPLAT_EPS);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, TwistVector};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn pp(u: f64, v: f64) -> ProjectedPoint {
        ProjectedPoint { u, v, z_cam: 10.0, visible: true }
    }

    #[test]
    fn lift_examples() {
        let d = |r, th| RadarDetection::new(r, th, 0.0, 1.0, 0).unwrap();
        assert_eq!(lift_detection(&d(10.0, 0.0), -0.5), Vec3::new(10.0, 0.0, -0.5));
        let p = lift_detection(&d(10.0, std::f64::consts::FRAC_PI_2), 0.0);
        assert!((p - Vec3::new(0.0, 10.0, 0.0)).norm() < 1e-12);
        let p = lift_detection(&d(5.0, std::f64::consts::FRAC_PI_4), 1.0);
        assert!((p - Vec3::new(5.0 * FRAC_1_SQRT_2, 5.0 * FRAC_1_SQRT_2, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn single_point_on_node() {
        let spec = MapSpec { width: 10, height: 8, channels: 2 };
        let f = [0.3, 0.9];
        let m = splat_image_plane(&[pp(4.0, 3.0)], &[&f], spec).unwrap();
        assert_eq!(m.mass[(3, 4)], 1.0);
        assert_eq!(m.mass.sum(), 1.0);
        for ch in 0..2 {
            assert!((m.normalized[(ch, 3, 4)] - f[ch] / (1.0 + SPLAT_EPS)).abs() < 1e-15);
            assert_eq!(m.normalized.index_axis(ndarray::Axis(0), ch).sum(), m.normalized[(ch, 3, 4)]);
        }
    }

    #[test]
    fn single_point_between_nodes() {
        let spec = MapSpec { width: 10, height: 8, channels: 1 };
        let m = splat_image_plane(&[pp(4.5, 3.5)], &[&[0.8]], spec).unwrap();
        for (y, x) in [(3, 4), (3, 5), (4, 4), (4, 5)] {
            assert_eq!(m.mass[(y, x)], 0.25);
            assert!((m.normalized[(0, y, x)] - 0.8).abs() < 1e-7);
        }
    }

    #[test]
    fn coincident_points() {
        let spec = MapSpec { width: 6, height: 6, channels: 1 };
        let m = splat_image_plane(&[pp(2.0, 2.0), pp(2.0, 2.0)], &[&[0.2], &[0.6]], spec).unwrap();
        assert!((m.normalized[(0, 2, 2)] - 0.8 / (2.0 + SPLAT_EPS)).abs() < 1e-15);
    }

    #[test]
    fn apron_and_invisible_points() {
        let spec = MapSpec { width: 6, height: 6, channels: 1 };
        let mut hidden = pp(2.0, 2.0);
        hidden.visible = false;
        let m = splat_image_plane(&[pp(-0.5, 5.5), hidden], &[&[1.0], &[1.0]], spec).unwrap();
        assert_eq!(m.mass.sum(), 0.25);
        assert_eq!(m.mass[(5, 0)], 0.25);
        assert!(splat_image_plane(&[pp(1.0, 1.0)], &[&[1.0, 2.0]], spec).is_err());
    }

    #[test]
    fn batch_matches_scalar_projection_and_cull() {
        let k = CameraIntrinsics::default().at_stride(4).unwrap();
        let t = se3_exp(&TwistVector::from_slice(&[0.1, 0.2, 0.3, 0.01, 0.02, -0.03])).unwrap();
        let pts: Vec<LiftedPoint> = [Vec3::new(0.0, 0.0, 10.0), Vec3::new(0.0, 0.0, -0.28)]
            .iter()
            .enumerate()
            .map(|(i, p)| LiftedPoint { position: *p, feature: vec![], source_index: i })
            .collect();
        let out = project_batch(&pts, &k, &t, 0.1);
        let s = project_point_with(&k, &t, &pts[0].position, 0.1);
        assert_eq!((out[0].u, out[0].v), (s.u, s.v));
        assert!(out[0].visible);
        assert!(!out[1].visible);

        let id = project_batch(&pts[..1], &k, &ExtrinsicTransform::identity(), 0.1);
        assert_eq!((id[0].u, id[0].v), (k.cx, k.cy));
    }
}
