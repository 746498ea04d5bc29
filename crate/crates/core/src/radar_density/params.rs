use serde::{Deserialize, Serialize};

use super::RadarDetection;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PersistenceMode {
    /// `g(F) = ln(1 + F)`
    Log,
    /// `g(F) = (F / N)^kappa`
    Power { kappa: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityParams {
    /// Mean of `ln(1 + s)` over the input sequence.
    pub mu_s: f64,
    /// Standard deviation of `ln(1 + s)` over the input sequence.
    pub sigma_s: f64,
    /// Doppler gate width (m/s).
    pub sigma_v: f64,
    /// When false the Doppler gate is replaced by 1.
    pub doppler_gate: bool,
    /// Gaussian smoothing width (cells).
    pub sigma_g: f64,
    /// Temporal decay, in (0, 1].
    pub gamma: f64,
    /// Window length in frames.
    pub window: usize,
    /// Occupancy threshold for the frequency map.
    pub epsilon: f64,
    pub persistence: PersistenceMode,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self {
            mu_s: 0.0,
            sigma_s: 1.0,
            sigma_v: 2.0,
            doppler_gate: true,
            sigma_g: 1.0,
            gamma: 0.8,
            window: 5,
            epsilon: 1e-6,
            persistence: PersistenceMode::Log,
        }
    }
}

impl DensityParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_s, self.sigma_s, self.sigma_v, self.sigma_g, self.gamma, self.epsilon]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite density parameter"));
        }
        if self.sigma_s <= 0.0 || self.sigma_v <= 0.0 || self.sigma_g <= 0.0 {
            return Err(Error::invalid("sigma_s, sigma_v and sigma_g must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if self.window == 0 {
            return Err(Error::invalid("window length must be >= 1"));
        }
        if let PersistenceMode::Power { kappa } = self.persistence {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::invalid("kappa must be positive"));
            }
        }
        Ok(())
    }

    pub fn with_stats(mut self, stats: IntensityStats) -> Self {
        self.mu_s = stats.mu_s;
        self.sigma_s = stats.sigma_s;
        self
    }
}

/// Log-intensity standardization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    pub mu_s: f64,
    pub sigma_s: f64,
}

impl IntensityStats {
    /// Mean and standard deviation of `ln(1 + s)` over every detection of the
    /// sequence. A degenerate spread falls back to 1.
    pub fn from_detections<'a>(dets: impl IntoIterator<Item = &'a RadarDetection>) -> Self {
        let logs: Vec<f64> = dets.into_iter().map(|d| d.intensity.ln_1p()).collect();
        if logs.is_empty() {
            return Self { mu_s: 0.0, sigma_s: 1.0 };
        }
        let n = logs.len() as f64;
        let mu = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        let sigma = var.sqrt();
        Self { mu_s: mu, sigma_s: if sigma > 1e-12 { sigma } else { 1.0 } }
    }
}
