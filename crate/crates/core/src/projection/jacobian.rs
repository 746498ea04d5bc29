use ndarray::Array2;
use std::collections::BTreeMap;

use super::splat::bilinear_support;
use super::{project_batch, splat_image_plane, LiftedPoint, MapSource, MapSpec, SplattedFeatureMap, SPLAT_EPS};
use crate::geometry::{
    gated_update, se3_left_jacobian, so3, CameraIntrinsics, ExtrinsicTransform, TwistVector, Vec3,
};
use crate::{par, Result};

/// Distance to an integer pixel coordinate below which a point counts as
/// sitting on a kernel kink.
const KINK_TOL: f64 = 1e-9;

/// Tent kernel `max(0, 1 - |x|)` and its slope. On the kinks (`x` in
/// {-1, 0, 1}) the slope is the average of the one-sided slopes.
pub fn tent_and_slope(x: f64) -> (f64, f64) {
    let a = x.abs();
    if a > 1.0 {
        (0.0, 0.0)
    } else if a == 1.0 {
        (0.0, -0.5 * x.signum())
    } else if x == 0.0 {
        (1.0, 0.0)
    } else {
        (1.0 - a, -x.signum())
    }
}

/// Projection of one radar-frame point under `exp(rho * xi) * T0` together
/// with `d(u, v) / d xi`. Returns `None` when the point is behind the cull
/// plane.
pub fn point_jacobian(
    k: &CameraIntrinsics,
    t: &ExtrinsicTransform,
    xi: &TwistVector,
    rho: f64,
    x_radar: &Vec3,
    z_min: f64,
) -> Option<(f64, f64, [[f64; 6]; 2])> {
    let p = t.transform_point(x_radar);
    if p.z <= z_min {
        return None;
    }
    // d p / d xi = rho * [I | -[p]x] * J_l(rho xi)
    let mut dp = nalgebra::Matrix3x6::<f64>::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&nalgebra::Matrix3::identity());
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-so3::hat(&p)));
    let dp = dp * se3_left_jacobian(&xi.scaled(rho)) * rho;
    let iz = 1.0 / p.z;
    let du = nalgebra::RowVector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz) * dp;
    let dv = nalgebra::RowVector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz) * dp;
    let mut j = [[0.0; 6]; 2];
    for c in 0..6 {
        j[0][c] = du[c];
        j[1][c] = dv[c];
    }
    Some((k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy, j))
}

/// Derivatives of one pixel of the splatted maps w.r.t. the twist.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelJacobian {
    pub x: usize,
    pub y: usize,
    pub d_mass: [f64; 6],
    pub d_accum: Vec<[f64; 6]>,
    pub d_normalized: Vec<[f64; 6]>,
    /// Some contributing point sits on a kernel kink; the slope used there is
    /// a subgradient.
    pub degenerate: bool,
}

/// Sparse Jacobian of the splatted maps, one entry per touched pixel in
/// row-major order. Pixels without a contributing detection are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatJacobian {
    pub channels: usize,
    pub pixels: Vec<PixelJacobian>,
}

impl SplatJacobian {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&PixelJacobian> {
        self.pixels
            .binary_search_by(|p| (p.y, p.x).cmp(&(y, x)))
            .ok()
            .map(|i| &self.pixels[i])
    }

    pub fn degenerate_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.degenerate).count()
    }

    /// Chain rule: `sum_p dL/dmap(p) * dmap(p)/dxi` for one channel of the
    /// chosen map.
    pub fn contract(&self, source: MapSource, channel: usize, dl_dmap: &Array2<f64>) -> [f64; 6] {
        let mut g = [0.0; 6];
        for p in &self.pixels {
            let w = dl_dmap[(p.y, p.x)];
            if w == 0.0 {
                continue;
            }
            let d = match source {
                MapSource::Normalized => &p.d_normalized[channel],
                MapSource::Accumulated => &p.d_accum[channel],
            };
            for i in 0..6 {
                g[i] += w * d[i];
            }
        }
        g
    }
}

struct PixelAcc {
    d_mass: [f64; 6],
    d_accum: Vec<[f64; 6]>,
    degenerate: bool,
}

/// Splatted maps at `T = exp(rho * xi) * T0` and their analytic Jacobian
/// w.r.t. `xi`.
pub fn splat_jacobian(
    points: &[LiftedPoint],
    k: &CameraIntrinsics,
    t0: &ExtrinsicTransform,
    xi: &TwistVector,
    rho: f64,
    spec: MapSpec,
    z_min: f64,
) -> Result<(SplattedFeatureMap, SplatJacobian)> {
    let t = gated_update(t0, xi, rho)?;
    let projected = project_batch(points, k, &t, z_min);
    let features: Vec<&[f64]> = points.iter().map(|p| p.feature.as_slice()).collect();
    let map = splat_image_plane(&projected, &features, spec)?;

    let idx: Vec<usize> = (0..points.len()).filter(|&i| projected[i].visible).collect();
    let jacs = par::map(&idx, |&i| point_jacobian(k, &t, xi, rho, &points[i].position, z_min));

    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut acc: BTreeMap<(usize, usize), PixelAcc> = BTreeMap::new();
    for (&i, jac) in idx.iter().zip(&jacs) {
        let Some((u, v, j)) = jac else { continue };
        let (x0, y0, ax, ay) = bilinear_support(*u, *v);
        let degenerate = ax.min(1.0 - ax) < KINK_TOL || ay.min(1.0 - ay) < KINK_TOL;
        for py in y0 - 1..=y0 + 1 {
            if py < 0 || py >= h {
                continue;
            }
            let (ky, sy) = tent_and_slope(py as f64 - v);
            for px in x0 - 1..=x0 + 1 {
                if px < 0 || px >= w {
                    continue;
                }
                let (kx, sx) = tent_and_slope(px as f64 - u);
                // kernel depends on (px - u, py - v)
                let dk_du = -sx * ky;
                let dk_dv = -kx * sy;
                if dk_du == 0.0 && dk_dv == 0.0 && kx * ky == 0.0 {
                    continue;
                }
                let mut dk = [0.0; 6];
                for c in 0..6 {
                    dk[c] = dk_du * j[0][c] + dk_dv * j[1][c];
                }
                let entry = acc.entry((py as usize, px as usize)).or_insert_with(|| PixelAcc {
                    d_mass: [0.0; 6],
                    d_accum: vec![[0.0; 6]; spec.channels],
                    degenerate: false,
                });
                entry.degenerate |= degenerate;
                for c in 0..6 {
                    entry.d_mass[c] += dk[c];
                }
                for (ch, f) in points[i].feature.iter().enumerate() {
                    for c in 0..6 {
                        entry.d_accum[ch][c] += f * dk[c];
                    }
                }
            }
        }
    }

    let pixels = acc
        .into_iter()
        .map(|((y, x), a)| {
            let denom = map.mass[(y, x)] + SPLAT_EPS;
            let d_normalized = (0..spec.channels)
                .map(|ch| {
                    let rbar = map.normalized[(ch, y, x)];
                    let mut d = [0.0; 6];
                    for c in 0..6 {
                        d[c] = (a.d_accum[ch][c] - rbar * a.d_mass[c]) / denom;
                    }
                    d
                })
                .collect();
            PixelJacobian { x, y, d_mass: a.d_mass, d_accum: a.d_accum, d_normalized, degenerate: a.degenerate }
        })
        .collect();
    Ok((map, SplatJacobian { channels: spec.channels, pixels }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;

    #[test]
    fn tent_slopes() {
        assert_eq!(tent_and_slope(0.0), (1.0, 0.0));
        assert_eq!(tent_and_slope(0.25), (0.75, -1.0));
        assert_eq!(tent_and_slope(-0.25), (0.75, 1.0));
        assert_eq!(tent_and_slope(1.0), (0.0, -0.5));
        assert_eq!(tent_and_slope(-1.0), (0.0, 0.5));
        assert_eq!(tent_and_slope(1.5), (0.0, 0.0));
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 110.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn all_invisible_gives_empty_jacobian() {
        let pts = vec![LiftedPoint { position: Vec3::new(0.0, 0.0, -5.0), feature: vec![1.0], source_index: 0 }];
        let spec = MapSpec { width: 64, height: 48, channels: 1 };
        let (map, jac) = splat_jacobian(&pts, &intrinsics(), &ExtrinsicTransform::identity(), &TwistVector::zero(), 1.0, spec, 0.1).unwrap();
        assert!(jac.is_empty());
        assert_eq!(map.mass.sum(), 0.0);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let k = intrinsics();
        let t0 = se3_exp(&TwistVector::from_slice(&[0.1, -0.2, 0.3, 0.05, 0.1, -0.02])).unwrap();
        let xi = TwistVector::from_slice(&[0.3, 0.1, -0.2, 0.1, -0.15, 0.05]);
        let x = Vec3::new(0.4, -0.3, 8.0);
        for rho in [0.25, 1.0] {
            let t = gated_update(&t0, &xi, rho).unwrap();
            let (_, _, j) = point_jacobian(&k, &t, &xi, rho, &x, 0.1).unwrap();
            let h = 1e-6;
            for c in 0..6 {
                let mut xp = xi;
                xp.0[c] += h;
                let mut xm = xi;
                xm.0[c] -= h;
                let tp = gated_update(&t0, &xp, rho).unwrap();
                let tm = gated_update(&t0, &xm, rho).unwrap();
                let (up, vp, _) = point_jacobian(&k, &tp, &xp, rho, &x, 0.1).unwrap();
                let (um, vm, _) = point_jacobian(&k, &tm, &xm, rho, &x, 0.1).unwrap();
                let fd_u = (up - um) / (2.0 * h);
                let fd_v = (vp - vm) / (2.0 * h);
                assert!((fd_u - j[0][c]).abs() < 1e-5 * (1.0 + fd_u.abs()), "u c{c}: {fd_u} vs {}", j[0][c]);
                assert!((fd_v - j[1][c]).abs() < 1e-5 * (1.0 + fd_v.abs()), "v c{c}: {fd_v} vs {}", j[1][c]);
            }
        }
    }

    #[test]
    fn translation_along_camera_x_shifts_u() {
        let k = intrinsics();
        let x = Vec3::new(0.7, 0.2, 12.0);
        let (_, _, j) = point_jacobian(&k, &ExtrinsicTransform::identity(), &TwistVector::zero(), 1.0, &x, 0.1).unwrap();
        assert!((j[0][0] - k.fx / 12.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gate_zeroes_jacobian() {
        let k = intrinsics();
        let xi = TwistVector::from_slice(&[0.3, 0.1, -0.2, 0.1, -0.15, 0.05]);
        let (_, _, j) = point_jacobian(&k, &ExtrinsicTransform::identity(), &xi, 0.0, &Vec3::new(0.1, 0.2, 5.0), 0.1).unwrap();
        assert!(j.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn isolated_point_normalized_map_is_flat() {
        // Kernel mass cancels in R / (Gamma + eps): a lone point only moves
        // the normalized map through eps.
        let k = intrinsics();
        let pts = vec![LiftedPoint { position: Vec3::new(0.13, 0.07, 6.0), feature: vec![0.9], source_index: 0 }];
        let spec = MapSpec { width: 64, height: 48, channels: 1 };
        let (_, jac) = splat_jacobian(&pts, &k, &ExtrinsicTransform::identity(), &TwistVector::zero(), 1.0, spec, 0.1).unwrap();
        let max_norm = jac.pixels.iter().flat_map(|p| p.d_normalized[0]).fold(0.0f64, |m, x| m.max(x.abs()));
        let max_acc = jac.pixels.iter().flat_map(|p| p.d_accum[0]).fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max_norm < 1e-5 * max_acc, "{max_norm} vs {max_acc}");
        assert_eq!(jac.degenerate_count(), 0);
    }

    #[test]
    fn kink_points_are_flagged() {
        let k = intrinsics();
        // projects exactly onto (cx, cy)
        let pts = vec![LiftedPoint { position: Vec3::new(0.0, 0.0, 5.0), feature: vec![1.0], source_index: 0 }];
        let spec = MapSpec { width: 64, height: 48, channels: 1 };
        let (_, jac) = splat_jacobian(&pts, &k, &ExtrinsicTransform::identity(), &TwistVector::zero(), 1.0, spec, 0.1).unwrap();
        assert!(jac.degenerate_count() > 0);
        assert!(jac.pixels.iter().all(|p| p.d_normalized[0].iter().all(|x| x.is_finite())));
    }
}
