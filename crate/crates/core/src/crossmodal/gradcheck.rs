//! Central-difference checks of the hand-written backward pass.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::model::{CrossModalParams, HeadGrad, RefinementOutput};
use crate::Result;

pub const FD_STEP: f64 = 1e-4;

/// `|t|^2 + (1 - q_w)^2`.
pub fn surrogate(out: &RefinementOutput) -> (f64, HeadGrad) {
    let t = out.t;
    let value = t.norm_squared() + (1.0 - out.q.w).powi(2);
    let g = HeadGrad {
        dq: [-2.0 * (1.0 - out.q.w), 0.0, 0.0, 0.0],
        dt: [2.0 * t.x, 2.0 * t.y, 2.0 * t.z],
        drho: 0.0,
    };
    (value, g)
}

/// Surrogate that also touches every quaternion component and the confidence.
pub fn surrogate_full(out: &RefinementOutput) -> (f64, HeadGrad) {
    let (v, mut g) = surrogate(out);
    let q = out.q;
    let extra = 0.5 * q.x + 0.3 * q.y - 0.2 * q.z;
    g.dq[1] += 0.5;
    g.dq[2] += 0.3;
    g.dq[3] -= 0.2;
    g.drho = 2.0 * out.rho;
    (v + extra + out.rho * out.rho, g)
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub analytic_norm: f64,
    pub rel_error: f64,
}

/// Compares analytic and numerical gradients on up to `per_tensor` randomly
/// chosen entries of every tensor. The error is
/// `|a - n| / max(|a|, |n|, 1e-8)` over the sampled sub-vector.
pub fn check_gradients<F>(
    params: &CrossModalParams,
    image: &Array2<f64>,
    radar: &Array2<f64>,
    scalar: F,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TensorCheck>>
where
    F: Fn(&RefinementOutput) -> (f64, HeadGrad),
{
    let trace = params.forward(image, radar)?;
    let (_, hg) = scalar(&trace.output);
    let grad = params.backward(&trace, &hg);
    let analytic = grad.named_tensors();
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let len = a.len();
        let idx: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            sample(rng, len, per_tensor).into_vec()
        };
        let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
        for &k in &idx {
            let orig = probe.named_tensors()[ti].1[k];
            let eval = |p: &mut CrossModalParams, x: f64| -> Result<f64> {
                p.named_tensors_mut()[ti].1[k] = x;
                Ok(scalar(&p.forward(image, radar)?.output).0)
            };
            let fp = eval(&mut probe, orig + FD_STEP)?;
            let fm = eval(&mut probe, orig - FD_STEP)?;
            probe.named_tensors_mut()[ti].1[k] = orig;
            let num = (fp - fm) / (2.0 * FD_STEP);
            diff += (a[k] - num).powi(2);
            an += a[k] * a[k];
            nn += num * num;
        }
        let (diff, an, nn) = (diff.sqrt(), an.sqrt(), nn.sqrt());
        out.push(TensorCheck {
            name: name.clone(),
            entries: idx.len(),
            analytic_norm: an,
            rel_error: diff / an.max(nn).max(1e-8),
        });
    }
    Ok(out)
}

pub fn max_rel_error(checks: &[TensorCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}
