use ndarray::Array2;

use super::SplattedFeatureMap;
use crate::{Error, Result};

/// Which raster of a [`SplattedFeatureMap`] feeds the alignment loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    /// `R / (Gamma + eps)`
    Normalized,
    /// `R`, the kernel-weighted feature sum.
    #[default]
    Accumulated,
}

impl MapSource {
    pub fn channel(&self, map: &SplattedFeatureMap, channel: usize) -> Array2<f64> {
        let arr = match self {
            MapSource::Normalized => &map.normalized,
            MapSource::Accumulated => &map.accum,
        };
        arr.index_axis(ndarray::Axis(0), channel).to_owned()
    }
}

#[derive(Clone, Debug)]
pub struct AlignmentLoss {
    pub loss: f64,
    /// d loss / d map, same shape as the map.
    pub grad: Array2<f64>,
}

fn centered(a: &Array2<f64>) -> (Array2<f64>, f64, bool) {
    let n = a.len() as f64;
    let mean = a.sum() / n;
    let c = a.mapv(|x| x - mean);
    let ss = c.iter().map(|x| x * x).sum::<f64>();
    let energy = a.iter().map(|x| x * x).sum::<f64>();
    // rounding leaves ~n * ulp^2 of variance in a constant raster
    let flat = ss <= 1e-24 * energy;
    (c, ss, flat)
}

/// Negative normalized cross-correlation between `map` and `target`, in
/// [-1, 1], with its exact gradient w.r.t. `map`. Zero-variance inputs give
/// 0 loss and zero gradient.
pub fn alignment_loss(map: &Array2<f64>, target: &Array2<f64>) -> Result<AlignmentLoss> {
    if map.dim() != target.dim() {
        return Err(Error::invalid(format!("map {:?} and target {:?} differ in shape", map.dim(), target.dim())));
    }
    let (a, ssa, flat_a) = centered(map);
    let (b, ssb, flat_b) = centered(target);
    if flat_a || flat_b {
        return Ok(AlignmentLoss { loss: 0.0, grad: Array2::zeros(map.dim()) });
    }
    let na = ssa.sqrt();
    let nb = ssb.sqrt();
    let ncc = (&a * &b).sum() / (na * nb);
    // d ncc / d a_i = b_i / (|a||b|) - ncc * a_i / |a|^2 (centering terms cancel)
    let grad = (&b / (na * nb) - &a * (ncc / ssa)).mapv(|g| -g);
    Ok(AlignmentLoss { loss: -ncc, grad })
}
