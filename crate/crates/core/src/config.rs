//! Aggregate run configuration loaded from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumConfig;
use crate::dynamics::DynamicsConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::PpoConfig;
use crate::reward::RewardConfig;
use crate::track::{Track, TrackSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dynamics: DynamicsConfig,
    pub track: TrackSpec,
    pub reward: RewardConfig,
    pub env: EnvConfig,
    pub curriculum: CurriculumConfig,
    pub ppo: PpoConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dynamics: DynamicsConfig::default(),
            track: TrackSpec {
                fixture: Some("splits-single".into()),
                ..TrackSpec::default()
            },
            reward: RewardConfig::default(),
            env: EnvConfig::default(),
            curriculum: CurriculumConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            e => e,
        })?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse("<config>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.env.validate(&self.dynamics)?;
        self.reward.weights.validate()?;
        self.curriculum.validate()?;
        self.ppo.validate()?;
        self.build_track()?;
        Ok(())
    }

    pub fn build_track(&self) -> Result<Track> {
        Track::from_spec(&self.track)
    }
}
