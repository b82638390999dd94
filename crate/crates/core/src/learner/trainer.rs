//! Rollout collection over a set of environments, PPO updates, curriculum
//! maintenance and periodic evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{compute_gae, ppo_update, sample_action, Policy, RolloutBatch, UpdateStats};
use crate::config::Config;
use crate::curriculum::{Curriculum, Visited};
use crate::env::{Action, Env, Observation, ResetState, Termination, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::eval::{run_eval, EvalOptions};
use crate::nn::Adam;
use crate::reward::RewardMode;
use crate::track::Track;

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sparse original reward, nominal starts.
    Sp,
    /// Original reward plus progress shaping, nominal starts.
    Rs,
    /// Sparse original reward with curriculum resets.
    Proposed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sp, Mode::Rs, Mode::Proposed];

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Mode::Rs => RewardMode::Rs,
            Mode::Sp | Mode::Proposed => RewardMode::Sp,
        }
    }

    pub fn uses_curriculum(self) -> bool {
        self == Mode::Proposed
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sp => "sp",
            Mode::Rs => "rs",
            Mode::Proposed => "proposed",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sp" => Ok(Mode::Sp),
            "rs" => Ok(Mode::Rs),
            "proposed" => Ok(Mode::Proposed),
            other => Err(Error::Config(format!("unknown mode `{other}` (sp, rs, proposed)"))),
        }
    }
}

/// Mixes a base seed with a tag and index into an independent seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ENV_TAG: u64 = 0xE11;
const EVAL_TAG: u64 = 0xE7A;

/// One line of the training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub eval_reward: Option<f64>,
    pub success_rate: Option<f64>,
    pub train_return: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub approx_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub curriculum_current: usize,
    pub curriculum_buffer: usize,
    pub seeds: usize,
}

pub fn write_log(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::parse(path, e))).collect()
}

pub struct Trainer {
    pub cfg: Config,
    pub mode: Mode,
    pub seed: u64,
    track: Arc<Track>,
    pub policy: Policy,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    envs: Vec<Env>,
    obs: Vec<Observation>,
    pub curriculum: Option<Curriculum>,
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub log: Vec<TrainLogRow>,
}

impl Trainer {
    pub fn new(mut cfg: Config, mode: Mode, seed: u64) -> Result<Self> {
        cfg.reward.mode = mode.reward_mode();
        cfg.validate()?;
        let track = Arc::new(cfg.build_track()?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Policy::new(OBS_DIM, ACT_DIM, &cfg.ppo.network, &mut rng);
        let adam = Adam::new(policy.num_params(), cfg.ppo.lr);
        let curriculum = if mode.uses_curriculum() {
            let mut c = Curriculum::new(cfg.curriculum)?;
            let n = c.init_from_goals(&track, &mut rng);
            log::info!("curriculum initialised with {n} expanded states");
            Some(c)
        } else {
            None
        };
        let mut t = Self {
            cfg,
            mode,
            seed,
            track,
            policy,
            adam,
            rng,
            envs: vec![],
            obs: vec![],
            curriculum,
            iteration: 0,
            env_steps: 0,
            episodes: 0,
            log: vec![],
        };
        t.spawn_envs()?;
        Ok(t)
    }

    pub fn track(&self) -> &Arc<Track> {
        &self.track
    }

    /// Fresh environments seeded from the run seed and current iteration.
    fn spawn_envs(&mut self) -> Result<()> {
        self.envs.clear();
        self.obs.clear();
        for i in 0..self.cfg.ppo.num_envs {
            let s = derive_seed(self.seed, ENV_TAG ^ ((self.iteration as u64) << 16), i as u64);
            let mut env = Env::new(self.track.clone(), &self.cfg, s)?;
            let obs = Self::reset_env(&mut env, self.curriculum.as_ref())?;
            self.envs.push(env);
            self.obs.push(obs);
        }
        Ok(())
    }

    fn reset_env(env: &mut Env, curriculum: Option<&Curriculum>) -> Result<Observation> {
        let Some(c) = curriculum else {
            return env.reset_from_start();
        };
        let start = env.start_sampler();
        let (s0, _) = c.sets.sample_reset(&start, env.rng_mut());
        match env.reset(&s0) {
            Err(Error::ResetOutOfBounds { .. }) => env.reset_from_start(),
            other => other,
        }
    }

    /// Trains until `budget` env steps or `max_iterations` (the configured
    /// iteration count when both are `None`). Logs an evaluation of the
    /// initial policy first.
    pub fn train(&mut self, budget: Option<u64>, max_iterations: Option<usize>) -> Result<()> {
        if self.log.is_empty() {
            let row = self.evaluate_row(None, None, 0)?;
            self.log.push(row);
        }
        let max_iterations = match (budget, max_iterations) {
            (None, None) => Some(self.cfg.ppo.iterations),
            (_, m) => m,
        };
        loop {
            if max_iterations.is_some_and(|m| self.iteration >= m) {
                break;
            }
            if budget.is_some_and(|b| self.env_steps + self.cfg.ppo.steps_per_iteration() > b) {
                break;
            }
            let row = self.run_iteration()?;
            log::info!(
                "iter {} steps {} eval {:?} success {:?} kl {:?}",
                row.iteration,
                row.env_steps,
                row.eval_reward,
                row.success_rate,
                row.approx_kl
            );
            self.log.push(row);
        }
        Ok(())
    }

    /// Mean-action evaluation from nominal starts; leaves the trainer
    /// untouched.
    pub fn evaluate(&self) -> Result<crate::eval::EvalReport> {
        run_eval(
            &self.policy,
            &self.cfg,
            self.track.clone(),
            EvalOptions {
                episodes: self.cfg.ppo.eval_episodes,
                gate_speed: None,
                seed: derive_seed(self.seed, EVAL_TAG, 0),
                record_trajectories: false,
            },
        )
    }

    fn evaluate_row(&self, stats: Option<UpdateStats>, train_return: Option<f64>, seeds: usize) -> Result<TrainLogRow> {
        let due = self.iteration % self.cfg.ppo.eval_interval == 0;
        let metrics = if due { Some(self.evaluate()?.metrics) } else { None };
        Ok(TrainLogRow {
            iteration: self.iteration,
            env_steps: self.env_steps,
            episodes: self.episodes,
            eval_reward: metrics.as_ref().map(|m| m.mean_return),
            success_rate: metrics.as_ref().map(|m| m.success_rate),
            train_return,
            policy_loss: stats.map(|s| s.policy_loss),
            value_loss: stats.map(|s| s.value_loss),
            entropy: stats.map(|s| s.entropy),
            approx_kl: stats.map(|s| s.approx_kl),
            clip_fraction: stats.map(|s| s.clip_fraction),
            epochs_run: stats.map_or(0, |s| s.epochs_run),
            early_stopped: stats.is_some_and(|s| s.early_stopped),
            curriculum_current: self.curriculum.as_ref().map_or(0, |c| c.sets.current.len()),
            curriculum_buffer: self.curriculum.as_ref().map_or(0, |c| c.sets.buffer.len()),
            seeds,
        })
    }

    fn obs_matrix(obs: &[Observation]) -> Vec<f64> {
        let mut m = Vec::with_capacity(obs.len() * OBS_DIM);
        for o in obs {
            m.extend_from_slice(o.as_slice());
        }
        m
    }

    /// One rollout, update, curriculum step and (when due) evaluation.
    pub fn run_iteration(&mut self) -> Result<TrainLogRow> {
        let cfg = self.cfg.ppo.clone();
        let n_env = self.envs.len();
        let steps = cfg.rollout_steps;
        let total = n_env * steps;
        let mut obs_buf = Vec::with_capacity(total * OBS_DIM);
        let mut act_buf = Vec::with_capacity(total * ACT_DIM);
        let mut logp = Vec::with_capacity(total);
        let mut rewards = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut dones = Vec::with_capacity(total);
        let mut visited = Vec::new();
        let mut finished_returns = Vec::new();
        let scaler = self.cfg.env.action;
        let std = self.policy.std();
        let mut counter = 0usize;

        for _ in 0..steps {
            let om = Self::obs_matrix(&self.obs);
            let means = self.policy.means(&om, n_env)?;
            let vals = self.policy.values(&om, n_env)?;
            obs_buf.extend_from_slice(&om);
            values.extend_from_slice(&vals);
            for e in 0..n_env {
                let s = sample_action(&means[e * ACT_DIM..(e + 1) * ACT_DIM], &std, &mut self.rng);
                let action: Action = std::array::from_fn(|k| s.action[k]);
                if self.curriculum.is_some() {
                    if counter % cfg.visited_stride == 0 {
                        let env = &self.envs[e];
                        visited.push(Visited {
                            reset: ResetState {
                                state: *env.state(),
                                waypoint: Some(env.cursor()),
                                hold_thrust: scaler.to_command(&action).thrust(),
                            },
                            obs: self.obs[e],
                        });
                    }
                    counter += 1;
                }
                let st = self.envs[e].step(&action)?;
                let mut r = st.reward.total;
                if st.info.termination == Some(Termination::StepCap) {
                    r += cfg.gamma * self.policy.values(st.obs.as_slice(), 1)?[0];
                }
                act_buf.extend_from_slice(&s.raw);
                logp.push(s.log_prob);
                rewards.push(r);
                dones.push(st.done);
                if st.done {
                    self.episodes += 1;
                    finished_returns.push(self.envs[e].episode().shaped_return);
                    self.obs[e] = Self::reset_env(&mut self.envs[e], self.curriculum.as_ref())?;
                } else {
                    self.obs[e] = st.obs;
                }
            }
        }
        let last_values = self.policy.values(&Self::obs_matrix(&self.obs), n_env)?;

        // Advantages per environment over its time-major column.
        let mut advantages = vec![0.0; total];
        let mut returns = vec![0.0; total];
        for e in 0..n_env {
            let col = |v: &[f64]| (0..steps).map(|t| v[t * n_env + e]).collect::<Vec<f64>>();
            let d: Vec<bool> = (0..steps).map(|t| dones[t * n_env + e]).collect();
            let (a, r) = compute_gae(&col(&rewards), &col(&values), &d, last_values[e], cfg.gamma, cfg.lambda);
            for t in 0..steps {
                advantages[t * n_env + e] = a[t];
                returns[t * n_env + e] = r[t];
            }
        }
        let mut batch = RolloutBatch {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            obs: obs_buf,
            actions: act_buf,
            log_probs: logp,
            rewards,
            values,
            dones,
            advantages,
            returns,
        };

        let backup = (self.policy.clone(), self.adam.clone());
        let stats = match ppo_update(&mut self.policy, &mut self.adam, &mut batch, &cfg, &mut self.rng) {
            Ok(s) => s,
            Err(Error::TrainingDiverged { reason, .. }) => {
                (self.policy, self.adam) = backup;
                return Err(Error::TrainingDiverged {
                    iteration: self.iteration + 1,
                    reason,
                });
            }
            Err(e) => return Err(e),
        };

        let mut seeds = 0;
        if let Some(c) = self.curriculum.as_mut() {
            let policy = &self.policy;
            let critic = |vs: &[Visited]| {
                let mut m = Vec::with_capacity(vs.len() * OBS_DIM);
                for v in vs {
                    m.extend_from_slice(v.obs.as_slice());
                }
                policy.values(&m, vs.len())
            };
            seeds = c.update(&self.track, &visited, critic, &mut self.rng)?;
        }

        self.iteration += 1;
        self.env_steps += total as u64;
        let train_return = if finished_returns.is_empty() {
            None
        } else {
            Some(finished_returns.iter().sum::<f64>() / finished_returns.len() as f64)
        };
        self.evaluate_row(Some(stats), train_return, seeds)
    }

    /// Replaces the environments after a restore so that rollouts continue
    /// from freshly reset episodes.
    pub(crate) fn respawn(&mut self) -> Result<()> {
        self.spawn_envs()
    }

    pub(crate) fn from_parts(
        cfg: Config,
        mode: Mode,
        seed: u64,
        policy: Policy,
        adam: Adam,
        rng: ChaCha8Rng,
        curriculum: Option<Curriculum>,
    ) -> Result<Self> {
        let track = Arc::new(cfg.build_track()?);
        Ok(Self {
            cfg,
            mode,
            seed,
            track,
            policy,
            adam,
            rng,
            envs: vec![],
            obs: vec![],
            curriculum,
            iteration: 0,
            env_steps: 0,
            episodes: 0,
            log: vec![],
        })
    }
}
