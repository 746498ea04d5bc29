use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;

use radcam::crossmodal::pool_tokens;
use radcam::geometry::{
    gated_update, pose_errors, se3_exp, se3_from_quat_trans, se3_log, CameraIntrinsics, ExtrinsicTransform,
    TwistVector, UnitQuaternion, Vec3,
};
use radcam::objectives::{calib_loss, regularizers};
use radcam::projection::{alignment_loss, splat_image_plane, MapSpec, ProjectedPoint};
use radcam::radar_density::{doppler_weight, splat_frame, window_weights, DensityParams, GridSpec, RadarDetection};

fn twist(max_angle: f64) -> impl Strategy<Value = TwistVector> {
    (prop::array::uniform3(-1.0..1.0f64), 0.0..max_angle, prop::array::uniform3(-5.0..5.0f64)).prop_filter_map(
        "degenerate axis",
        |(axis, angle, rho)| {
            let a = Vec3::from(axis);
            (a.norm() > 1e-3).then(|| TwistVector::new(Vec3::from(rho), a.normalize() * angle))
        },
    )
}

fn transform() -> impl Strategy<Value = ExtrinsicTransform> {
    twist(3.0).prop_map(|xi| se3_exp(&xi).unwrap())
}

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    prop::array::uniform4(-1.0..1.0f64).prop_filter_map("near zero", |q| {
        UnitQuaternion::new(q[0], q[1], q[2], q[3]).normalized().ok().filter(|u| u.norm() > 0.5)
    })
}

fn raster(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0..2.0f64, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

proptest! {
    #[test]
    fn log_inverts_exp(xi in twist(3.0)) {
        let back = se3_log(&se3_exp(&xi).unwrap()).unwrap();
        prop_assert!((back.0 - xi.0).amax() < 1e-9);
    }

    #[test]
    fn closed_gate_is_identity(t0 in transform(), xi in twist(3.0)) {
        let t = gated_update(&t0, &xi, 0.0).unwrap();
        prop_assert!((t.rotation() - t0.rotation()).norm() < 1e-12);
        prop_assert!((t.translation() - t0.translation()).norm() < 1e-12);
    }

    #[test]
    fn open_gate_is_full_update(t0 in transform(), xi in twist(3.0)) {
        let t = gated_update(&t0, &xi, 1.0).unwrap();
        let want = se3_exp(&xi).unwrap().compose(&t0);
        prop_assert!((t.to_homogeneous() - want.to_homogeneous()).amax() < 1e-12);
    }

    #[test]
    fn quaternion_sign_is_irrelevant(q in quaternion(), t in prop::array::uniform3(-10.0..10.0f64)) {
        let t = Vec3::from(t);
        prop_assert_eq!(se3_from_quat_trans(&q, &t).unwrap(), se3_from_quat_trans(&q.neg(), &t).unwrap());
    }

    #[test]
    fn pose_error_is_symmetric(a in transform(), b in transform()) {
        let (ab, ba) = (pose_errors(&a, &b), pose_errors(&b, &a));
        prop_assert!((ab.rot_deg - ba.rot_deg).abs() < 1e-9);
        prop_assert!(pose_errors(&a, &a).rot_deg.abs() < 1e-9);
    }

    #[test]
    fn rotation_loss_ignores_sign(q in quaternion(), r in quaternion()) {
        let t = Vec3::zeros();
        let a = calib_loss(&q, &t, &r, &t, 1.0, 1.0);
        let b = calib_loss(&q.neg(), &t, &r, &t, 1.0, 1.0);
        prop_assert_eq!(a.rotation, b.rotation);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.rotation));
    }

    #[test]
    fn closed_gate_silences_regularizers(xi in twist(3.0)) {
        let r = regularizers(&xi, 0.0, Some((&xi.scaled(0.0), 0.0)));
        prop_assert_eq!(r.prior, 0.0);
        prop_assert_eq!(r.smooth, 0.0);
    }

    #[test]
    fn window_weights_sum_to_one(gamma in 0.01..=1.0f64, n in 1usize..40) {
        let a = window_weights(gamma, n);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn doppler_gate_decreases_with_speed(v1 in -30.0..30.0f64, v2 in -30.0..30.0f64) {
        let p = DensityParams::default();
        let (lo, hi) = if v1.abs() <= v2.abs() { (v1, v2) } else { (v2, v1) };
        prop_assert!(doppler_weight(hi, &p) <= doppler_weight(lo, &p));
    }

    #[test]
    fn radar_splat_conserves_weight(
        dets in prop::collection::vec((0.0..100.0f64, -0.5..0.5f64, -5.0..5.0f64, 0.0..50.0f64), 0..60)
    ) {
        let grid = GridSpec::default();
        let params = DensityParams::default();
        let dets: Vec<RadarDetection> =
            dets.iter().map(|&(r, a, v, s)| RadarDetection::new(r, a, v, s, 0).unwrap()).collect();
        let out = splat_frame(&dets, &grid, &params);
        let want: f64 = dets.iter().filter(|d| grid.contains(d.range, d.azimuth)).map(|d| {
            radcam::radar_density::detection_weight(d, &params)
        }).sum();
        prop_assert!((out.grid.sum() - want).abs() < 1e-9);
        prop_assert!(out.grid.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn image_splat_mass_is_one_per_interior_point(
        pts in prop::collection::vec((0.0..31.0f64, 0.0..23.0f64, 0.0..3.0f64), 1..40)
    ) {
        let k = CameraIntrinsics::new(20.0, 20.0, 16.0, 12.0, 32, 24).unwrap();
        let spec = MapSpec::from_intrinsics(&k, 1);
        let projected: Vec<ProjectedPoint> =
            pts.iter().map(|&(u, v, _)| ProjectedPoint { u, v, z_cam: 5.0, visible: true }).collect();
        let feats: Vec<[f64; 1]> = pts.iter().map(|&(_, _, f)| [f]).collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let map = splat_image_plane(&projected, &refs, spec).unwrap();
        prop_assert!((map.mass.sum() - pts.len() as f64).abs() < 1e-9);
        let feature_total: f64 = pts.iter().map(|p| p.2).sum();
        prop_assert!((map.accum.sum() - feature_total).abs() < 1e-9);
        let fmax = pts.iter().map(|p| p.2).fold(0.0, f64::max);
        for ((y, x), g) in map.mass.indexed_iter() {
            if *g >= 1.0 {
                prop_assert!(map.normalized[(0, y, x)] <= fmax + 1e-12);
            }
        }
    }

    #[test]
    fn ncc_ignores_affine_rescaling(a in raster(6, 7), b in raster(6, 7), s in 0.1..10.0f64, c in -5.0..5.0f64) {
        let base = alignment_loss(&a, &b).unwrap();
        let scaled = alignment_loss(&a.mapv(|x| s * x + c), &b).unwrap();
        prop_assert!((base.loss - scaled.loss).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base.loss));
    }

    #[test]
    fn pooling_ignores_token_order(
        rows in prop::collection::vec(prop::array::uniform4(-3.0..3.0f64), 2..12),
        split in 1usize..11,
        rot in 0usize..12,
    ) {
        let n = rows.len();
        let split = split.min(n - 1);
        let mat = |rs: &[[f64; 4]]| DMatrix::from_fn(rs.len(), 4, |i, j| rs[i][j]);
        let z = pool_tokens(&mat(&rows[..split]), &mat(&rows[split..])).unwrap();
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let z2 = pool_tokens(&mat(&shuffled[..split]), &mat(&shuffled[split..])).unwrap();
        prop_assert!((z - z2).amax() < 1e-12);
    }
}
