use std::path::Path;

use serde::{Deserialize, Serialize};

use super::refine::DescentOptions;
use super::scene::SceneSpec;
use super::sweep::SweepSpec;
use crate::objectives::LossWeights;
use crate::radar_density::{DensityParams, GridSpec};
use crate::Result;

/// Everything an experiment needs. Every field has a default, so a config
/// file only lists overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub density: DensityParams,
    pub grid: GridSpec,
    pub scene: SceneSpec,
    pub descent: DescentOptions,
    pub sweep: SweepSpec,
    pub loss_weights: LossWeights,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            density: DensityParams::default(),
            grid: GridSpec::default(),
            scene: SceneSpec::default(),
            descent: DescentOptions::default(),
            sweep: SweepSpec::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        self.grid.validate()?;
        self.scene.validate()?;
        self.descent.validate()?;
        self.sweep.validate()?;
        self.loss_weights.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
