//! Versioned binary checkpoints: an 8-byte magic, a little-endian format
//! version, then a CBOR payload.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::Policy;
use super::trainer::{Mode, TrainLogRow, Trainer};
use crate::config::Config;
use crate::curriculum::Curriculum;
use crate::error::{Error, Result};
use crate::nn::{Adam, LayerShape};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"AEROCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position as (high, low).
    pub word_pos: (u64, u64),
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: ((pos >> 64) as u64, pos as u64),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos.0 as u128) << 64) | self.word_pos.1 as u128);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub mode: Mode,
    pub seed: u64,
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub config: Config,
    pub actor_shape: Vec<LayerShape>,
    pub critic_shape: Vec<LayerShape>,
    pub policy: Policy,
    pub adam: Adam,
    pub rng: RngState,
    pub curriculum: Option<Curriculum>,
    pub log: Vec<TrainLogRow>,
}

impl Checkpoint {
    pub fn capture(t: &Trainer) -> Self {
        Self {
            mode: t.mode,
            seed: t.seed,
            iteration: t.iteration,
            env_steps: t.env_steps,
            episodes: t.episodes,
            config: t.cfg.clone(),
            actor_shape: t.policy.actor.layers.clone(),
            critic_shape: t.policy.critic.layers.clone(),
            policy: t.policy.clone(),
            adam: t.adam.clone(),
            rng: RngState::capture(&t.rng),
            curriculum: t.curriculum.clone(),
            log: t.log.clone(),
        }
    }

    /// Shape, size and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        let p = &self.policy;
        if p.actor.layers != self.actor_shape || p.critic.layers != self.critic_shape {
            return Err(Error::Checkpoint("recorded shapes disagree with the stored networks".into()));
        }
        for (name, m) in [("actor", &p.actor), ("critic", &p.critic)] {
            let want: usize = m.layers.iter().map(LayerShape::num_params).sum();
            if want != m.params.len() {
                return Err(Error::Checkpoint(format!(
                    "{name} has {} parameters, shape implies {want}",
                    m.params.len()
                )));
            }
            if m.layers.windows(2).any(|w| w[0].output != w[1].input) {
                return Err(Error::Checkpoint(format!("{name} layer widths do not chain")));
            }
        }
        if self.adam.m.len() != p.num_params() || self.adam.v.len() != p.num_params() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        if !p.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        ciborium::into_writer(self, &mut out).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        let mut ver = [0u8; 4];
        r.read_exact(&mut magic)
            .and_then(|_| r.read_exact(&mut ver))
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(ver);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let ck: Self = ciborium::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds a trainer at the saved iteration. Environments restart from
    /// fresh episodes seeded by the run seed and iteration.
    pub fn into_trainer(self) -> Result<Trainer> {
        let mut t = Trainer::from_parts(
            self.config,
            self.mode,
            self.seed,
            self.policy,
            self.adam,
            self.rng.restore(),
            self.curriculum,
        )?;
        t.iteration = self.iteration;
        t.env_steps = self.env_steps;
        t.episodes = self.episodes;
        t.log = self.log;
        t.respawn()?;
        Ok(t)
    }
}
