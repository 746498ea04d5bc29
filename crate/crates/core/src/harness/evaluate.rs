use serde::{Deserialize, Serialize};

use crate::geometry::{pose_errors, se3_exp, se3_log, ExtrinsicTransform, TwistVector};
use crate::{Error, Result};

/// Perturbation axis, expressed in the camera frame of the left update
/// `exp(xi) * T`: `rx` pitch, `ry` yaw, `rz` roll, `tx` lateral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Tx,
    Ty,
    Tz,
    Rx,
    Ry,
    Rz,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Tx, Axis::Ty, Axis::Tz, Axis::Rx, Axis::Ry, Axis::Rz];

    /// Position in the twist `(rho, phi)`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        self.index() >= 3
    }

    pub fn name(self) -> &'static str {
        ["tx", "ty", "tz", "rx", "ry", "rz"][self.index()]
    }

    /// Single-axis twist; `magnitude` in degrees for rotation axes and
    /// meters for translation axes.
    pub fn twist(self, magnitude: f64) -> TwistVector {
        let mut v = [0.0; 6];
        v[self.index()] = if self.is_rotation() { magnitude.to_radians() } else { magnitude };
        TwistVector::from_slice(&v)
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown axis {s:?}")))
    }
}

/// `exp(delta) * T0`.
pub fn inject_miscalibration(t0: &ExtrinsicTransform, delta: &TwistVector) -> Result<ExtrinsicTransform> {
    Ok(se3_exp(delta)?.compose(t0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rot_before_deg: f64,
    pub rot_after_deg: f64,
    pub trans_before_m: f64,
    pub trans_after_m: f64,
    pub rot_reduction: f64,
    pub trans_reduction: f64,
    /// `log(T * T_true^-1)` per axis: meters for `t*`, degrees for `r*`.
    /// NaN when the logarithm is ill-conditioned.
    pub residual_before: [f64; 6],
    pub residual_after: [f64; 6],
}

impl Metrics {
    pub fn axis_before(&self, axis: Axis) -> f64 {
        self.residual_before[axis.index()].abs()
    }

    pub fn axis_after(&self, axis: Axis) -> f64 {
        self.residual_after[axis.index()].abs()
    }
}

/// `1 - after / before`, 0 when nothing was injected.
pub fn reduction(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        1.0 - after / before
    } else {
        0.0
    }
}

fn residual(t: &ExtrinsicTransform, truth: &ExtrinsicTransform) -> [f64; 6] {
    match se3_log(&t.compose(&truth.inverse())) {
        Ok(xi) => {
            let mut r = xi.as_array();
            for v in &mut r[3..] {
                *v = v.to_degrees();
            }
            r
        }
        Err(_) => [f64::NAN; 6],
    }
}

pub fn evaluate(refined: &ExtrinsicTransform, truth: &ExtrinsicTransform, perturbed: &ExtrinsicTransform) -> Metrics {
    let before = pose_errors(perturbed, truth);
    let after = pose_errors(refined, truth);
    Metrics {
        rot_before_deg: before.rot_deg,
        rot_after_deg: after.rot_deg,
        trans_before_m: before.trans_m,
        trans_after_m: after.trans_m,
        rot_reduction: reduction(before.rot_deg, after.rot_deg),
        trans_reduction: reduction(before.trans_m, after.trans_m),
        residual_before: residual(perturbed, truth),
        residual_after: residual(refined, truth),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub below: usize,
    /// Values above the last edge, plus NaNs.
    pub above: usize,
}

/// Bins `[e_i, e_{i+1})`; the last bin also takes its right edge.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("histogram edges must be strictly increasing, at least two"));
    }
    let last = *edges.last().unwrap();
    let mut h = Histogram { edges: edges.to_vec(), counts: vec![0; edges.len() - 1], below: 0, above: 0 };
    for &v in values {
        if v < edges[0] {
            h.below += 1;
        } else if v == last {
            h.counts[edges.len() - 2] += 1;
        } else if v > last || v.is_nan() {
            h.above += 1;
        } else {
            h.counts[edges.partition_point(|e| *e <= v) - 1] += 1;
        }
    }
    Ok(h)
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}
