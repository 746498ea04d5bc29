//! Auxiliary losses for the refinement head: extrinsic supervision, a
//! small-update prior, temporal smoothness and attention consistency.
//!
//! Every loss returns its gradient w.r.t. its direct inputs. At the
//! non-differentiable points of `|.|` the subgradient 0 is used.

use serde::{Deserialize, Serialize};

use crate::geometry::{TwistVector, UnitQuaternion, Vec3};
use crate::{Error, Result};

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Weight of the smoothness term.
    pub gamma_w: f64,
    pub eta: f64,
    pub lambda_r: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1e-2, gamma_w: 1e-2, eta: 1e-3, lambda_r: 1.0, lambda_t: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma_w, self.eta, self.lambda_r, self.lambda_t];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibLoss {
    pub total: f64,
    pub rotation: f64,
    pub translation: f64,
    pub d_q: [f64; 4],
    pub d_t: Vec3,
}

/// `lambda_r * (1 - |<q, q_ref>|) + lambda_t * |t - t_ref|_1`.
pub fn calib_loss(
    q: &UnitQuaternion,
    t: &Vec3,
    q_ref: &UnitQuaternion,
    t_ref: &Vec3,
    lambda_r: f64,
    lambda_t: f64,
) -> CalibLoss {
    let dot = q.dot(q_ref);
    let rotation = 1.0 - dot.abs();
    let s = sgn(dot);
    let r = q_ref.as_array();
    let d_q = [-s * r[0] * lambda_r, -s * r[1] * lambda_r, -s * r[2] * lambda_r, -s * r[3] * lambda_r];
    let diff = t - t_ref;
    let translation = diff.abs().sum();
    let d_t = diff.map(sgn) * lambda_t;
    CalibLoss { total: lambda_r * rotation + lambda_t * translation, rotation, translation, d_q, d_t }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularizers {
    pub prior: f64,
    pub smooth: f64,
    pub d_prior_xi: [f64; 6],
    pub d_prior_rho: f64,
    pub d_smooth_xi: [f64; 6],
    pub d_smooth_rho: f64,
}

/// `|rho xi|^2` and `|rho xi - rho_prev xi_prev|_1`; the smoothness term is 0
/// when there is no previous frame.
pub fn regularizers(xi: &TwistVector, rho: f64, prev: Option<(&TwistVector, f64)>) -> Regularizers {
    let x = xi.as_array();
    let n2: f64 = x.iter().map(|v| v * v).sum();
    let mut out = Regularizers {
        prior: rho * rho * n2,
        smooth: 0.0,
        d_prior_xi: x.map(|v| 2.0 * rho * rho * v),
        d_prior_rho: 2.0 * rho * n2,
        d_smooth_xi: [0.0; 6],
        d_smooth_rho: 0.0,
    };
    if let Some((xp, rp)) = prev {
        let p = xp.as_array();
        for i in 0..6 {
            let u = rho * x[i] - rp * p[i];
            out.smooth += u.abs();
            out.d_smooth_xi[i] = rho * sgn(u);
            out.d_smooth_rho += sgn(u) * x[i];
        }
    }
    out
}

/// Normalized attention of one query over image and radar tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryAttention {
    pub image: Vec<f64>,
    pub radar: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub queries: Vec<QueryAttention>,
}

pub const ATTENTION_SUM_TOL: f64 = 1e-6;

impl AttentionSnapshot {
    pub fn validate(&self) -> Result<()> {
        for (m, q) in self.queries.iter().enumerate() {
            for v in [&q.image, &q.radar] {
                if v.iter().any(|a| !(*a >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > ATTENTION_SUM_TOL {
                    return Err(Error::invalid(format!("query {m}: attention must be non-negative and sum to 1")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAttnLoss {
    pub value: f64,
    /// Gradient w.r.t. the current snapshot, same layout.
    pub grad: AttentionSnapshot,
}

/// Sum over matched `(current, previous)` query pairs of the L1 differences
/// of both attention vectors. Unmatched queries contribute nothing.
pub fn qattn_consistency(
    current: &AttentionSnapshot,
    previous: &AttentionSnapshot,
    matching: &[(usize, usize)],
) -> Result<QAttnLoss> {
    let mut grad = AttentionSnapshot {
        queries: current
            .queries
            .iter()
            .map(|q| QueryAttention { image: vec![0.0; q.image.len()], radar: vec![0.0; q.radar.len()] })
            .collect(),
    };
    let mut value = 0.0;
    for &(m, mp) in matching {
        let (a, b) = match (current.queries.get(m), previous.queries.get(mp)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::invalid(format!("matched pair ({m}, {mp}) out of range"))),
        };
        if a.image.len() != b.image.len() || a.radar.len() != b.radar.len() {
            return Err(Error::invalid(format!("matched pair ({m}, {mp}) has mismatched shapes")));
        }
        let g = &mut grad.queries[m];
        for (x, (y, gg)) in a.image.iter().zip(b.image.iter().zip(g.image.iter_mut())) {
            value += (x - y).abs();
            *gg += sgn(x - y);
        }
        for (x, (y, gg)) in a.radar.iter().zip(b.radar.iter().zip(g.radar.iter_mut())) {
            value += (x - y).abs();
            *gg += sgn(x - y);
        }
    }
    Ok(QAttnLoss { value, grad })
}

/// Evaluated components; absent terms contribute nothing.
#[derive(Clone, Debug, Default)]
pub struct AuxComponents {
    pub calib: Option<CalibLoss>,
    pub regularizers: Option<Regularizers>,
    pub qattn: Option<QAttnLoss>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxLoss {
    pub value: f64,
    pub d_q: [f64; 4],
    pub d_t: Vec3,
    pub d_xi: [f64; 6],
    pub d_rho: f64,
    pub d_attention: Option<AttentionSnapshot>,
}

/// `alpha * calib + beta * prior + gamma_w * smooth + eta * qattn`. A term with
/// zero weight is skipped entirely.
pub fn total_aux_loss(c: &AuxComponents, w: &LossWeights) -> Result<AuxLoss> {
    w.validate()?;
    let mut out = AuxLoss {
        value: 0.0,
        d_q: [0.0; 4],
        d_t: Vec3::zeros(),
        d_xi: [0.0; 6],
        d_rho: 0.0,
        d_attention: None,
    };
    if let (Some(cl), true) = (&c.calib, w.alpha != 0.0) {
        out.value += w.alpha * cl.total;
        for i in 0..4 {
            out.d_q[i] += w.alpha * cl.d_q[i];
        }
        out.d_t += cl.d_t * w.alpha;
    }
    if let Some(r) = &c.regularizers {
        if w.beta != 0.0 {
            out.value += w.beta * r.prior;
            for i in 0..6 {
                out.d_xi[i] += w.beta * r.d_prior_xi[i];
            }
            out.d_rho += w.beta * r.d_prior_rho;
        }
        if w.gamma_w != 0.0 {
            out.value += w.gamma_w * r.smooth;
            for i in 0..6 {
                out.d_xi[i] += w.gamma_w * r.d_smooth_xi[i];
            }
            out.d_rho += w.gamma_w * r.d_smooth_rho;
        }
    }
    if let (Some(qa), true) = (&c.qattn, w.eta != 0.0) {
        out.value += w.eta * qa.value;
        let mut g = qa.grad.clone();
        for q in &mut g.queries {
            q.image.iter_mut().chain(q.radar.iter_mut()).for_each(|x| *x *= w.eta);
        }
        out.d_attention = Some(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
        UnitQuaternion::new(w, x, y, z)
    }

    #[test]
    fn calib_zero_and_sign_flip() {
        let a = q(0.5, 0.5, 0.5, 0.5);
        let t = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(calib_loss(&a, &t, &a, &t, 1.0, 1.0).total, 0.0);
        assert_eq!(calib_loss(&a.neg(), &t, &a, &t, 1.0, 1.0).total, 0.0);
        let b = q(0.5, -0.5, 0.5, -0.5);
        let l = calib_loss(&a, &t, &b, &t, 1.0, 1.0);
        assert_eq!(l.rotation, 1.0);
        assert_eq!(l.d_q, [0.0; 4]);
    }

    #[test]
    fn calib_gradient_fd() {
        let qa = [0.8, 0.1, -0.3, 0.2];
        let qr = q(0.9, 0.2, -0.1, 0.1);
        let t = Vec3::new(0.3, -0.2, 0.5);
        let tr = Vec3::new(0.1, 0.1, 0.1);
        let f = |v: [f64; 4], t: Vec3| calib_loss(&q(v[0], v[1], v[2], v[3]), &t, &qr, &tr, 0.7, 1.3).total;
        let l = calib_loss(&q(qa[0], qa[1], qa[2], qa[3]), &t, &qr, &tr, 0.7, 1.3);
        let h = 1e-6;
        for i in 0..4 {
            let (mut p, mut m) = (qa, qa);
            p[i] += h;
            m[i] -= h;
            let n = (f(p, t) - f(m, t)) / (2.0 * h);
            assert!((n - l.d_q[i]).abs() <= 1e-5 * n.abs().max(1e-8));
        }
        for i in 0..3 {
            let (mut p, mut m) = (t, t);
            p[i] += h;
            m[i] -= h;
            let n = (f(qa, p) - f(qa, m)) / (2.0 * h);
            assert!((n - l.d_t[i]).abs() <= 1e-5 * n.abs().max(1e-8));
        }
    }

    #[test]
    fn regularizer_cases() {
        let xi = TwistVector::from_slice(&[0.3, -0.1, 0.2, 0.05, 0.0, -0.4]);
        let r = regularizers(&xi, 0.0, Some((&xi, 0.0)));
        assert_eq!((r.prior, r.smooth), (0.0, 0.0));
        let half = xi.scaled(0.5);
        assert_eq!(regularizers(&xi, 0.5, Some((&half, 1.0))).smooth, 0.0);
        let e = TwistVector::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(regularizers(&e, 1.0, None).prior, 1.0);
        assert_eq!(regularizers(&e, 1.0, None).smooth, 0.0);
    }

    #[test]
    fn regularizer_gradient_fd() {
        let x = [0.3, -0.1, 0.2, 0.05, 0.7, -0.4];
        let p = TwistVector::from_slice(&[0.1, 0.2, -0.3, 0.0, 0.1, 0.2]);
        let rho = 0.6;
        let f = |x: [f64; 6], rho: f64| {
            let r = regularizers(&TwistVector::from_slice(&x), rho, Some((&p, 0.8)));
            r.prior + r.smooth
        };
        let r = regularizers(&TwistVector::from_slice(&x), rho, Some((&p, 0.8)));
        let h = 1e-6;
        for i in 0..6 {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let n = (f(a, rho) - f(b, rho)) / (2.0 * h);
            let an = r.d_prior_xi[i] + r.d_smooth_xi[i];
            assert!((n - an).abs() <= 1e-5 * n.abs().max(1e-8), "{i}");
        }
        let n = (f(x, rho + h) - f(x, rho - h)) / (2.0 * h);
        assert!((n - r.d_prior_rho - r.d_smooth_rho).abs() <= 1e-5 * n.abs());
    }

    #[test]
    fn qattn_swap_gives_two() {
        let a = AttentionSnapshot { queries: vec![QueryAttention { image: vec![1.0, 0.0], radar: vec![0.5, 0.5] }] };
        let b = AttentionSnapshot { queries: vec![QueryAttention { image: vec![0.0, 1.0], radar: vec![0.5, 0.5] }] };
        assert_eq!(qattn_consistency(&a, &b, &[(0, 0)]).unwrap().value, 2.0);
        assert_eq!(qattn_consistency(&a, &a, &[(0, 0)]).unwrap().value, 0.0);
        assert_eq!(qattn_consistency(&a, &b, &[]).unwrap().value, 0.0);
        let c = AttentionSnapshot { queries: vec![QueryAttention { image: vec![1.0], radar: vec![1.0] }] };
        assert!(qattn_consistency(&a, &c, &[(0, 0)]).is_err());
        assert!(a.validate().is_ok());
    }

    #[test]
    fn total_weights() {
        let a = q(1.0, 0.0, 0.0, 0.0);
        let b = q(0.0, 1.0, 0.0, 0.0);
        let xi = TwistVector::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let comps = AuxComponents {
            calib: Some(calib_loss(&a, &Vec3::zeros(), &b, &Vec3::new(1.0, 0.0, 0.0), 1.0, 1.0)),
            regularizers: Some(regularizers(&xi, 1.0, Some((&TwistVector::zero(), 1.0)))),
            qattn: None,
        };
        let zero = LossWeights { alpha: 0.0, beta: 0.0, gamma_w: 0.0, eta: 0.0, lambda_r: 1.0, lambda_t: 1.0 };
        assert_eq!(total_aux_loss(&comps, &zero).unwrap().value, 0.0);
        let unit = LossWeights { alpha: 1.0, beta: 1.0, gamma_w: 1.0, eta: 1.0, ..zero };
        assert_eq!(total_aux_loss(&comps, &unit).unwrap().value, 2.0 + 1.0 + 1.0);
        let unsup = LossWeights { alpha: 0.0, ..unit };
        assert_eq!(total_aux_loss(&comps, &unsup).unwrap().d_t, Vec3::zeros());
        assert!(LossWeights { beta: -1.0, ..unit }.validate().is_err());
    }
}
