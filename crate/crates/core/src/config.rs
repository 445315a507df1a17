//! Run configuration file: `[motion]`, `[appearance]`, `[filter]`,
//! `[linking]` and `[sim]` sections of key = value pairs. Missing keys take
//! their defaults; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceParams;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, StepParams};
use crate::linking::LinkingConfig;
use crate::motion::{MotionModel, MotionParams};
use crate::simulator::SimConfig;
use crate::tracker::TrackerConfig;

/// `[motion]`: the motion parameters plus the tracker's random seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub sigma_v: f64,
    pub sigma_theta1: f64,
    pub sigma_theta2: f64,
    pub mix_weight1: f64,
    pub attenuation_d: f64,
    pub model: MotionModel,
    pub seed: u64,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection::from_params(&MotionParams::default(), 0)
    }
}

impl MotionSection {
    pub fn from_params(p: &MotionParams, seed: u64) -> Self {
        MotionSection {
            sigma_v: p.sigma_v,
            sigma_theta1: p.sigma_theta1,
            sigma_theta2: p.sigma_theta2,
            mix_weight1: p.mix_weight1,
            attenuation_d: p.attenuation_d,
            model: p.model,
            seed,
        }
    }

    pub fn params(&self) -> MotionParams {
        MotionParams {
            sigma_v: self.sigma_v,
            sigma_theta1: self.sigma_theta1,
            sigma_theta2: self.sigma_theta2,
            mix_weight1: self.mix_weight1,
            attenuation_d: self.attenuation_d,
            model: self.model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub motion: MotionSection,
    pub appearance: AppearanceParams,
    pub filter: FilterConfig,
    pub linking: LinkingConfig,
    pub sim: SimConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key with its default value.
    pub fn default_text() -> String {
        Config::default().to_text()
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker().validate()?;
        self.simulation().validate()
    }

    pub fn step(&self) -> StepParams {
        StepParams {
            motion: self.motion.params(),
            appearance: self.appearance,
            filter: self.filter,
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            step: self.step(),
            linking: self.linking,
            seed: self.motion.seed,
        }
    }

    /// Simulator settings with the generation-side motion taken from
    /// `[motion]`.
    pub fn simulation(&self) -> SimConfig {
        SimConfig {
            motion: self.motion.params(),
            ..self.sim
        }
    }

    /// Overrides both the tracker and simulator seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.motion.seed = seed;
        self.sim.seed = seed;
        self
    }
}
