//! Gaussian actor, separate critic, advantage estimation and the clipped
//! surrogate update.

use std::f64::consts::{E, PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Width of the observation encoder layer.
    pub encoder: usize,
    pub hidden: Vec<usize>,
    /// Initial exploration standard deviation per action channel.
    pub init_std: f64,
    /// Weight scale of the actor's output layer.
    pub actor_out_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder: 512,
            hidden: vec![512, 512, 256, 128],
            init_std: 0.5,
            actor_out_gain: 0.01,
        }
    }
}

impl NetworkConfig {
    pub fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input, self.encoder];
        s.extend(&self.hidden);
        s.push(output);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

/// `[ppo]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub num_envs: usize,
    pub rollout_steps: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    /// Epochs stop early once the approximate KL exceeds 1.5× this value.
    pub target_kl: Option<f64>,
    pub iterations: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Every n-th visited state is kept as a curriculum seed candidate.
    pub visited_stride: usize,
    pub network: NetworkConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 8192,
            num_envs: 64,
            rollout_steps: 256,
            ent_coef: 1e-3,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            target_kl: Some(0.02),
            iterations: 100,
            eval_interval: 1,
            eval_episodes: 16,
            visited_stride: 4,
            network: NetworkConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("need gamma in [0, 1) and lambda in [0, 1]".into()));
        }
        if !(self.clip > 0.0 && self.lr > 0.0) {
            return Err(Error::Config("clip and lr must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.num_envs == 0 || self.rollout_steps == 0 {
            return Err(Error::Config("epochs, minibatch, num_envs, rollout_steps must be positive".into()));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.visited_stride == 0 {
            return Err(Error::Config("eval_interval, eval_episodes, visited_stride must be positive".into()));
        }
        if self.ent_coef < 0.0 || self.vf_coef < 0.0 || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        self.network.validate()
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.num_envs * self.rollout_steps) as u64
    }
}

/// Actor with tanh-bounded mean and state-independent log standard
/// deviation, plus a separate value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, net: &NetworkConfig, rng: &mut R) -> Self {
        let actor = Mlp::new(
            &net.sizes(obs_dim, act_dim),
            Activation::Elu,
            Activation::Tanh,
            net.actor_out_gain,
            rng,
        );
        let critic = Mlp::new(&net.sizes(obs_dim, 1), Activation::Elu, Activation::Identity, 1.0, rng);
        Self {
            actor,
            critic,
            log_std: vec![net.init_std.ln(); act_dim],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + self.log_std.len()
    }

    /// Actor, critic and log-std parameters concatenated.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(&self.actor.params);
        v.extend(&self.critic.params);
        v.extend(&self.log_std);
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let (a, rest) = p.split_at(self.actor.num_params());
        let (c, s) = rest.split_at(self.critic.num_params());
        self.actor.params.copy_from_slice(a);
        self.critic.params.copy_from_slice(c);
        self.log_std.copy_from_slice(s);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.params.iter().chain(&self.critic.params).chain(&self.log_std).all(|x| x.is_finite())
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Mean action and standard deviation for one observation.
    pub fn forward_actor(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy observation"));
        }
        Ok((self.actor.predict(obs, 1)?, self.std()))
    }

    pub fn means(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.actor.predict(obs, batch)
    }

    pub fn values(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.critic.predict(obs, batch)
    }
}

/// Log density of `a` under a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * TAU.ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * E).ln()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    /// Unclamped Gaussian draw; the log-probability refers to this.
    pub raw: Vec<f64>,
    /// Draw clamped to `[-1, 1]`, as sent to the environment.
    pub action: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], std: &[f64], rng: &mut R) -> SampledAction {
    let raw: Vec<f64> = mean
        .iter()
        .zip(std)
        .map(|(m, s)| {
            let n: f64 = StandardNormal.sample(rng);
            m + s * n
        })
        .collect();
    let log_std: Vec<f64> = std.iter().map(|s| s.ln()).collect();
    SampledAction {
        log_prob: gaussian_log_prob(mean, &log_std, &raw),
        action: raw.iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
        raw,
    }
}

/// Advantages by the backward recursion `A_t = δ_t + γλ(1 − d_t)A_{t+1}`
/// with `δ_t = r_t + γ(1 − d_t)V_{t+1} − V_t`. `last_value` bootstraps the
/// step after the sequence. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "misaligned rollout arrays");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Flattened on-policy samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / sd;
        }
    }
}

/// Loss coefficients used by [`ppo_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

impl From<&PpoConfig> for LossCoefs {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip: c.clip,
            vf_coef: c.vf_coef,
            ent_coef: c.ent_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Minibatch view into a [`RolloutBatch`].
pub struct Minibatch<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Mean clipped-surrogate + value + entropy loss over the minibatch and its
/// gradient in [`Policy::flat_params`] layout.
pub fn ppo_loss(policy: &Policy, mb: &Minibatch<'_>, coefs: LossCoefs) -> Result<(LossStats, Vec<f64>)> {
    let n = mb.old_log_probs.len();
    let ad = policy.act_dim();
    let inv_n = 1.0 / n as f64;
    let na = policy.actor.num_params();
    let nc = policy.critic.num_params();
    let mut grad = vec![0.0; policy.num_params()];

    let actor_cache = policy.actor.forward(mb.obs, n)?;
    let means = actor_cache.output();
    let inv_var: Vec<f64> = policy.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut g_mean = vec![0.0; n * ad];
    let mut g_log_std = vec![0.0; ad];
    let mut stats = LossStats::default();
    for i in 0..n {
        let mu = &means[i * ad..(i + 1) * ad];
        let a = &mb.actions[i * ad..(i + 1) * ad];
        let logp = gaussian_log_prob(mu, &policy.log_std, a);
        let log_ratio = logp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip) * adv;
        stats.policy -= unclipped.min(clipped) * inv_n;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
        if (ratio - 1.0).abs() > coefs.clip {
            stats.clip_fraction += inv_n;
        }
        // d(-min)/dlogp: the unclipped branch carries gradient, the clipped
        // branch is flat.
        if unclipped <= clipped {
            let dl = -unclipped * inv_n;
            for k in 0..ad {
                let d = a[k] - mu[k];
                g_mean[i * ad + k] += dl * d * inv_var[k];
                g_log_std[k] += dl * (d * d * inv_var[k] - 1.0);
            }
        }
    }
    policy.actor.backward(&actor_cache, &g_mean, &mut grad[..na]);

    let critic_cache = policy.critic.forward(mb.obs, n)?;
    let values = critic_cache.output();
    let mut g_v = vec![0.0; n];
    for i in 0..n {
        let e = values[i] - mb.returns[i];
        stats.value += 0.5 * e * e * inv_n;
        g_v[i] = coefs.vf_coef * e * inv_n;
    }
    policy.critic.backward(&critic_cache, &g_v, &mut grad[na..na + nc]);

    stats.entropy = gaussian_entropy(&policy.log_std);
    for (g, gl) in grad[na + nc..].iter_mut().zip(&g_log_std) {
        *g = gl - coefs.ent_coef;
    }
    stats.total = stats.policy + coefs.vf_coef * stats.value - coefs.ent_coef * stats.entropy;
    Ok((stats, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

/// Runs the clipped-surrogate optimization over `batch`. Advantages are
/// normalized first. Stats are averaged over the minibatches of the last
/// epoch that ran.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    adam: &mut Adam,
    batch: &mut RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    batch.normalize_advantages();
    let n = batch.len();
    let (od, ad) = (batch.obs_dim, batch.act_dim);
    let mb_size = cfg.minibatch.min(n).max(1);
    let coefs = LossCoefs::from(cfg);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = UpdateStats::default();
    let mut obs = Vec::with_capacity(mb_size * od);
    let mut act = Vec::with_capacity(mb_size * ad);
    let (mut lp, mut adv, mut ret) = (Vec::new(), Vec::new(), Vec::new());
    let mut params = policy.flat_params();
    for epoch in 0..cfg.epochs {
        idx.shuffle(rng);
        let mut acc = LossStats::default();
        let mut count = 0usize;
        for chunk in idx.chunks(mb_size) {
            obs.clear();
            act.clear();
            lp.clear();
            adv.clear();
            ret.clear();
            for &i in chunk {
                obs.extend_from_slice(&batch.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&batch.actions[i * ad..(i + 1) * ad]);
                lp.push(batch.log_probs[i]);
                adv.push(batch.advantages[i]);
                ret.push(batch.returns[i]);
            }
            let mb = Minibatch {
                obs: &obs,
                actions: &act,
                old_log_probs: &lp,
                advantages: &adv,
                returns: &ret,
            };
            let (s, mut g) = ppo_loss(policy, &mb, coefs)?;
            if !s.total.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::TrainingDiverged {
                    iteration: 0,
                    reason: "non-finite loss or gradient".into(),
                });
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let k = cfg.max_grad_norm / norm;
                g.iter_mut().for_each(|x| *x *= k);
            }
            adam.step(&mut params, &g);
            policy.set_flat_params(&params);
            if !policy.is_finite() {
                return Err(Error::TrainingDiverged {
                    iteration: 0,
                    reason: "non-finite parameters after update".into(),
                });
            }
            acc.policy += s.policy;
            acc.value += s.value;
            acc.entropy += s.entropy;
            acc.approx_kl += s.approx_kl;
            acc.clip_fraction += s.clip_fraction;
            count += 1;
        }
        let c = count.max(1) as f64;
        out = UpdateStats {
            policy_loss: acc.policy / c,
            value_loss: acc.value / c,
            entropy: acc.entropy / c,
            approx_kl: acc.approx_kl / c,
            clip_fraction: acc.clip_fraction / c,
            epochs_run: epoch + 1,
            early_stopped: false,
        };
        if let Some(t) = cfg.target_kl {
            if out.approx_kl > 1.5 * t && epoch + 1 < cfg.epochs {
                out.early_stopped = true;
                break;
            }
        }
    }
    Ok(out)
}
