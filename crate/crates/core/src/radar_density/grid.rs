use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Range-azimuth raster layout. Grid nodes sit at `r_i = i * r_max / (n_range - 1)`
/// and `theta_j = az_min + j * (az_max - az_min) / (n_azimuth - 1)`; a
/// detection on a node lands entirely in that cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub r_max: f64,
    #[serde(rename = "az_min_deg", with = "degrees")]
    pub az_min: f64,
    #[serde(rename = "az_max_deg", with = "degrees")]
    pub az_max: f64,
}

mod degrees {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rad: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(rad.to_degrees())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::deserialize(d)?.to_radians())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_range: 256,
            n_azimuth: 128,
            r_max: 100.0,
            az_min: (-60f64).to_radians(),
            az_max: 60f64.to_radians(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_range < 2 || self.n_azimuth < 2 {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::invalid("r_max must be positive"));
        }
        if !(self.az_max > self.az_min && self.az_min.is_finite() && self.az_max.is_finite()) {
            return Err(Error::invalid("azimuth span must be non-empty"));
        }
        Ok(())
    }

    pub fn range_step(&self) -> f64 {
        self.r_max / (self.n_range - 1) as f64
    }

    pub fn azimuth_step(&self) -> f64 {
        (self.az_max - self.az_min) / (self.n_azimuth - 1) as f64
    }

    pub fn range_at(&self, i: usize) -> f64 {
        i as f64 * self.range_step()
    }

    pub fn azimuth_at(&self, j: usize) -> f64 {
        self.az_min + j as f64 * self.azimuth_step()
    }

    pub fn contains(&self, range: f64, azimuth: f64) -> bool {
        (0.0..=self.r_max).contains(&range) && (self.az_min..=self.az_max).contains(&azimuth)
    }

    /// Continuous grid coordinates `(i, j)` of a polar position.
    pub fn to_cell(&self, range: f64, azimuth: f64) -> (f64, f64) {
        (range / self.range_step(), (azimuth - self.az_min) / self.azimuth_step())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_range, self.n_azimuth)
    }
}

/// Non-negative raster over a [`GridSpec`], rows indexed by range.
#[derive(Clone, Debug, PartialEq)]
pub struct RAGrid {
    pub spec: GridSpec,
    pub values: Array2<f64>,
}

impl RAGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: Array2::zeros(spec.shape()) }
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-cell count of window frames in which the cell was occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMap {
    pub counts: Array2<u32>,
}

/// Normalized 1-D Gaussian taps of half-width `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian convolution with zero padding. The 2-D kernel
/// `exp(-(di^2 + dj^2) / 2 sigma^2)` factors into two 1-D passes.
pub fn gaussian_blur(values: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let taps = gaussian_taps(sigma);
    let half = (taps.len() / 2) as isize;
    let (rows, cols) = values.dim();
    let mut tmp = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let jj = j as isize + k as isize - half;
                if jj >= 0 && (jj as usize) < cols {
                    acc += t * values[(i, jj as usize)];
                }
            }
            tmp[(i, j)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let ii = i as isize + k as isize - half;
                if ii >= 0 && (ii as usize) < rows {
                    acc += t * tmp[(ii as usize, j)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    out
}
