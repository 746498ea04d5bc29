//! SO(3) helpers shared by the SE(3) maps.
//!
//! The closed-form coefficients below lose digits to cancellation for small
//! angles, so each switches to a 4-term Taylor expansion under
//! [`SERIES_THRESHOLD`].

use super::{Mat3, Vec3};

pub const SERIES_THRESHOLD: f64 = 1e-2;

/// The quartic and quintic coefficients of the SE(3) Jacobian cancel harder.
pub const SERIES_THRESHOLD_HIGH: f64 = 1e-1;

#[rustfmt::skip]
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// sin(t) / t
pub fn coef_a(t: f64) -> f64 {
    if t < SERIES_THRESHOLD {
        let t2 = t * t;
        1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    } else {
        t.sin() / t
    }
}

/// (1 - cos t) / t^2
pub fn coef_b(t: f64) -> f64 {
    if t < SERIES_THRESHOLD {
        let t2 = t * t;
        0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0))
    } else {
        let s = (0.5 * t).sin();
        2.0 * s * s / (t * t)
    }
}

/// (t - sin t) / t^3
pub fn coef_c(t: f64) -> f64 {
    if t < SERIES_THRESHOLD {
        let t2 = t * t;
        1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0))
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

/// (1 - A / (2B)) / t^2, the quadratic coefficient of the inverse left Jacobian.
pub fn coef_d(t: f64) -> f64 {
    if t < SERIES_THRESHOLD_HIGH {
        let t2 = t * t;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1_209_600.0
    } else {
        (1.0 - coef_a(t) / (2.0 * coef_b(t))) / (t * t)
    }
}

/// (t^2 + 2 cos t - 2) / (2 t^4)
pub fn coef_e(t: f64) -> f64 {
    if t < SERIES_THRESHOLD_HIGH {
        let t2 = t * t;
        1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2 * t2 * t2 / 3_628_800.0
    } else {
        (t * t + 2.0 * t.cos() - 2.0) / (2.0 * t.powi(4))
    }
}

/// (2t - 3 sin t + t cos t) / (2 t^5)
pub fn coef_f(t: f64) -> f64 {
    if t < SERIES_THRESHOLD_HIGH {
        let t2 = t * t;
        1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120_960.0 - t2 * t2 * t2 / 9_979_200.0
    } else {
        (2.0 * t - 3.0 * t.sin() + t * t.cos()) / (2.0 * t.powi(5))
    }
}

/// Rodrigues' formula.
pub fn exp(phi: &Vec3) -> Mat3 {
    let t = phi.norm();
    let w = hat(phi);
    Mat3::identity() + w * coef_a(t) + w * w * coef_b(t)
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let t = phi.norm();
    let w = hat(phi);
    Mat3::identity() + w * coef_b(t) + w * w * coef_c(t)
}

pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let t = phi.norm();
    let w = hat(phi);
    Mat3::identity() - w * 0.5 + w * w * coef_d(t)
}

/// Rotation angle in [0, pi], from the trace and the skew part via atan2.
pub fn angle(r: &Mat3) -> f64 {
    let c = 0.5 * (r.trace() - 1.0);
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    s.atan2(c)
}

/// Axis-angle vector of `r`. Returns the angle alongside so callers can
/// decide whether the branch is well conditioned.
pub fn log(r: &Mat3) -> (Vec3, f64) {
    let c = 0.5 * (r.trace() - 1.0);
    let sv = 0.5 * vee(&(r - r.transpose()));
    let s = sv.norm();
    let theta = s.atan2(c);
    if theta < SERIES_THRESHOLD {
        return (sv / coef_a(theta), theta);
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return (sv * (theta / s), theta);
    }
    // Near pi the skew part vanishes; recover the axis from the symmetric part.
    let sym = (r + r.transpose() - Mat3::identity() * (2.0 * c)) / (2.0 * (1.0 - c));
    let k = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(k).into_owned() / sym[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&sv) < 0.0 {
        axis = -axis;
    }
    (axis * theta, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_closed_forms_agree_at_threshold() {
        let t = SERIES_THRESHOLD;
        let below = t * (1.0 - 1e-12);
        for (name, f, exact) in [
            ("a", coef_a as fn(f64) -> f64, t.sin() / t),
            ("b", coef_b, (1.0 - t.cos()) / (t * t)),
            ("c", coef_c, (t - t.sin()) / t.powi(3)),
        ] {
            let rel = ((f(below) - exact) / exact).abs();
            assert!(rel < 1e-9, "{name}: rel {rel}");
        }

        let t = SERIES_THRESHOLD_HIGH;
        let below = t * (1.0 - 1e-12);
        let d_exact = (1.0 - (t * t.sin()) / (4.0 * (0.5 * t).sin().powi(2))) / (t * t);
        assert!(((coef_d(below) - d_exact) / d_exact).abs() < 1e-9);
        let e_exact = (t * t + 2.0 * t.cos() - 2.0) / (2.0 * t.powi(4));
        let f_exact = (2.0 * t - 3.0 * t.sin() + t * t.cos()) / (2.0 * t.powi(5));
        assert!(((coef_e(below) - e_exact) / e_exact).abs() < 1e-9);
        assert!(((coef_f(below) - f_exact) / f_exact).abs() < 1e-9);
    }

    #[test]
    fn log_near_pi_recovers_axis() {
        let axis = Vec3::new(1.0, -2.0, 0.5).normalize();
        let theta = std::f64::consts::PI - 1e-4;
        let (phi, th) = log(&exp(&(axis * theta)));
        assert!((th - theta).abs() < 1e-9);
        assert!((phi - axis * theta).norm() < 1e-8);
    }

    #[test]
    fn jacobian_inverse() {
        for phi in [Vec3::new(0.3, -0.2, 1.1), Vec3::new(1e-4, 0.0, 2e-4), Vec3::zeros()] {
            let p = left_jacobian(&phi) * left_jacobian_inv(&phi);
            assert!((p - Mat3::identity()).norm() < 1e-13);
        }
    }
}
