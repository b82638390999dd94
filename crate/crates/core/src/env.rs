//! Episodic flight environment: observation assembly, action rescaling,
//! latency-delayed physics stepping, reward and termination.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynamics::{self, Command, DynamicsConfig, FlightModel, LatencyBuffer, Quat, QuadState, Vec3};
use crate::error::{Error, Result};
use crate::reward::{self, RewardBreakdown, RewardConfig, RewardTerms};
use crate::track::{self, Pose, Track, Waypoint};

pub const OBS_DIM: usize = 28;
pub const ACT_DIM: usize = 4;

pub type Action = [f64; ACT_DIM];

/// Tolerance on incoming normalized actions before they count as out of range.
const ACTION_SLACK: f64 = 1.001;

/// Policy input: two upcoming waypoints in the body frame followed by the
/// vehicle's own state and previous action.
///
/// | range   | content                                  |
/// |---------|------------------------------------------|
/// | 0..3    | next waypoint position, body frame       |
/// | 3..7    | next waypoint attitude relative to body  |
/// | 7..10   | following waypoint position, body frame  |
/// | 10..14  | following waypoint attitude              |
/// | 14..17  | world position                           |
/// | 17..21  | attitude quaternion (w, x, y, z)         |
/// | 21..24  | body-frame velocity                      |
/// | 24..28  | previous normalized action               |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn gate_offset(&self, which: usize) -> Vec3 {
        let o = 7 * which;
        Vec3::new(self.0[o], self.0[o + 1], self.0[o + 2])
    }

    pub fn gate_attitude(&self, which: usize) -> [f64; 4] {
        let o = 7 * which + 3;
        [self.0[o], self.0[o + 1], self.0[o + 2], self.0[o + 3]]
    }

    pub fn body_velocity(&self) -> Vec3 {
        Vec3::new(self.0[21], self.0[22], self.0[23])
    }

    pub fn last_action(&self) -> Action {
        [self.0[24], self.0[25], self.0[26], self.0[27]]
    }
}

/// Quaternion as `[w, x, y, z]` with `w ≥ 0`.
pub fn canonical_wxyz(q: &Quat) -> [f64; 4] {
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Builds the observation for the vehicle `state` with waypoint `cursor`
/// next, at simulation time `t`. Past the last waypoint the final waypoint
/// is repeated.
pub fn observe(
    state: &QuadState,
    waypoints: &[Waypoint],
    cursor: usize,
    t: f64,
    last_action: &Action,
) -> Observation {
    let last = waypoints.len() - 1;
    let first = cursor.min(last);
    let second = (cursor + 1).min(last);
    let q = &state.orientation;
    let mut o = [0.0; OBS_DIM];
    for (slot, idx) in [first, second].into_iter().enumerate() {
        let pose = waypoints[idx].pose_at(t);
        let rel = q.inverse_transform_vector(&(pose.position - state.position));
        let att = canonical_wxyz(&(q.inverse() * pose.orientation));
        let base = 7 * slot;
        o[base..base + 3].copy_from_slice(rel.as_slice());
        o[base + 3..base + 7].copy_from_slice(&att);
    }
    o[14..17].copy_from_slice(state.position.as_slice());
    o[17..21].copy_from_slice(&canonical_wxyz(q));
    o[21..24].copy_from_slice(state.body_velocity().as_slice());
    o[24..28].copy_from_slice(last_action);
    Observation(o)
}

/// Affine map between normalized actions in `[-1, 1]⁴` and commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionScaler {
    pub mean: [f64; 4],
    pub amplitude: [f64; 4],
}

impl Default for ActionScaler {
    fn default() -> Self {
        Self {
            mean: [10.0, 0.0, 0.0, 0.0],
            amplitude: [
                10.0,
                dynamics::ROLL_PITCH_RATE_MAX,
                dynamics::ROLL_PITCH_RATE_MAX,
                dynamics::YAW_RATE_MAX,
            ],
        }
    }
}

impl ActionScaler {
    pub fn validate(&self) -> Result<()> {
        if self.amplitude.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("action amplitudes must be positive".into()));
        }
        Ok(())
    }

    pub fn scale_raw(&self, a: &Action) -> [f64; 4] {
        std::array::from_fn(|i| self.mean[i] + self.amplitude[i] * a[i])
    }

    pub fn unscale(&self, raw: &[f64; 4]) -> Action {
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.amplitude[i])
    }

    pub fn to_command(&self, a: &Action) -> Command {
        Command::from_array(self.scale_raw(a))
    }
}

/// Initial-state distribution used outside the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    /// Offset from the track's start point.
    pub offset: [f64; 3],
    /// Half side of the cube positions are drawn from, m.
    pub half_extent: f64,
    pub yaw_range: [f64; 2],
    pub max_speed: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        Self {
            offset: [0.0; 3],
            half_extent: 1.0,
            yaw_range: [-PI, PI],
            max_speed: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartSampler {
    pub center: Vec3,
    pub cfg: StartConfig,
}

impl StartSampler {
    pub fn new(track: &Track, cfg: StartConfig) -> Self {
        Self {
            center: track.start + Vec3::from(cfg.offset),
            cfg,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QuadState {
        let h = self.cfg.half_extent;
        let jitter = Vec3::from_fn(|_, _| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 });
        let [ylo, yhi] = self.cfg.yaw_range;
        let yaw = if yhi > ylo { rng.random_range(ylo..=yhi) } else { ylo };
        let speed = if self.cfg.max_speed > 0.0 {
            rng.random_range(0.0..=self.cfg.max_speed)
        } else {
            0.0
        };
        QuadState {
            position: self.center + jitter,
            orientation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw),
            velocity: random_unit(rng) * speed,
            body_rates: Vec3::zeros(),
        }
    }

    pub fn sample_reset<R: Rng + ?Sized>(&self, rng: &mut R) -> ResetState {
        ResetState::start(self.sample(rng))
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// `[env]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub max_steps: usize,
    pub policy_rate: f64,
    /// Per-episode gate oscillation speed is drawn uniformly from this range.
    pub gate_speed: [f64; 2],
    /// Overrides the track's oscillation amplitude when set.
    pub gate_amplitude: Option<f64>,
    pub randomize_phase: bool,
    pub start: StartConfig,
    pub action: ActionScaler,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: 1500,
            policy_rate: 100.0,
            gate_speed: [0.0, 1.0],
            gate_amplitude: None,
            randomize_phase: true,
            start: StartConfig::default(),
            action: ActionScaler::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, dynamics: &DynamicsConfig) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be positive".into()));
        }
        if !(self.policy_rate > 0.0) {
            return Err(Error::Config("env.policy_rate must be positive".into()));
        }
        let [lo, hi] = self.gate_speed;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::Config("env.gate_speed must be an ordered non-negative range".into()));
        }
        let ratio = 1.0 / (self.policy_rate * dynamics.dt);
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "policy period 1/{} is not a whole number of physics steps of {}",
                self.policy_rate, dynamics.dt
            )));
        }
        self.action.validate()
    }

    pub fn substeps(&self, dynamics: &DynamicsConfig) -> usize {
        (1.0 / (self.policy_rate * dynamics.dt)).round() as usize
    }
}

/// A state to start an episode from, with the waypoint it is heading to and
/// the thrust used to pre-fill the command history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetState {
    pub state: QuadState,
    pub waypoint: Option<usize>,
    pub hold_thrust: f64,
}

impl ResetState {
    pub fn start(state: QuadState) -> Self {
        Self {
            state,
            waypoint: Some(0),
            hold_thrust: -dynamics::GRAVITY.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepCap,
    OutOfBounds,
    TrackComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePass {
    pub waypoint: usize,
    pub time: f64,
    pub p_error: f64,
    pub theta_error_deg: f64,
    pub local: [f64; 3],
}

/// Per-episode summary, one JSON line each in episode logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub gates: usize,
    pub first_waypoint: usize,
    pub completed: Vec<bool>,
    pub passes: Vec<GatePass>,
    pub flight_time: f64,
    pub steps: usize,
    pub termination: Option<Termination>,
    pub original_return: f64,
    pub shaped_return: f64,
    pub gate_speed: f64,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.termination == Some(Termination::TrackComplete)
    }
}

/// One row of an exported trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub p: [f64; 3],
    pub q: [f64; 4],
    pub v: [f64; 3],
    pub w: [f64; 3],
    pub cmd: [f64; 4],
    pub reward: f64,
    pub gate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub termination: Option<Termination>,
    pub passed: Option<GatePass>,
    pub cursor: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// A single simulated vehicle flying one track. Owns its random stream so
/// that instances never share mutable state.
#[derive(Debug, Clone)]
pub struct Env {
    track: Arc<Track>,
    dynamics: DynamicsConfig,
    cfg: EnvConfig,
    reward: RewardConfig,
    substeps: usize,
    rng: ChaCha8Rng,
    gate_speed_override: Option<f64>,
    record_trajectory: bool,

    state: QuadState,
    waypoints: Vec<Waypoint>,
    cursor: usize,
    steps: usize,
    model: FlightModel,
    latency_offset: f64,
    latency: LatencyBuffer,
    last_action: Action,
    prev_position: Vec3,
    last_errors: Option<(f64, f64)>,
    done: bool,
    record: EpisodeRecord,
    trajectory: Vec<TrajectoryRow>,
    clamp_warnings: u64,
}

impl Env {
    pub fn new(track: Arc<Track>, config: &Config, seed: u64) -> Result<Self> {
        Self::from_parts(
            track,
            config.dynamics.clone(),
            config.env,
            config.reward,
            seed,
        )
    }

    pub fn from_parts(
        track: Arc<Track>,
        dynamics: DynamicsConfig,
        cfg: EnvConfig,
        reward: RewardConfig,
        seed: u64,
    ) -> Result<Self> {
        dynamics.validate()?;
        cfg.validate(&dynamics)?;
        reward.weights.validate()?;
        track.validate()?;
        let period = 1.0 / cfg.policy_rate;
        let r = &dynamics.randomization;
        let capacity = LatencyBuffer::capacity_for(r.latency_offset_range[1], r.latency_window, period);
        let substeps = cfg.substeps(&dynamics);
        let model = FlightModel::ideal(dynamics.rate_time_constant);
        let waypoints = track.waypoints.clone();
        let start = QuadState::at_rest(track.start);
        Ok(Self {
            substeps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gate_speed_override: None,
            record_trajectory: false,
            state: start,
            cursor: 0,
            steps: 0,
            model,
            latency_offset: r.latency_offset_range[0],
            latency: LatencyBuffer::new(capacity),
            last_action: [0.0; 4],
            prev_position: start.position,
            last_errors: None,
            done: true,
            record: EpisodeRecord {
                gates: waypoints.len(),
                first_waypoint: 0,
                completed: vec![false; waypoints.len()],
                passes: vec![],
                flight_time: 0.0,
                steps: 0,
                termination: None,
                original_return: 0.0,
                shaped_return: 0.0,
                gate_speed: 0.0,
            },
            trajectory: vec![],
            clamp_warnings: 0,
            waypoints,
            track,
            dynamics,
            cfg,
            reward,
        })
    }

    pub fn track(&self) -> &Arc<Track> {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn set_reward_config(&mut self, reward: RewardConfig) {
        self.reward = reward;
    }

    /// Pins every gate's oscillation speed for subsequent episodes.
    pub fn set_gate_speed(&mut self, speed: Option<f64>) {
        self.gate_speed_override = speed;
    }

    pub fn set_record_trajectory(&mut self, on: bool) {
        self.record_trajectory = on;
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 / self.cfg.policy_rate
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings
    }

    pub fn latency_offset(&self) -> f64 {
        self.latency_offset
    }

    pub fn flight_model(&self) -> &FlightModel {
        &self.model
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn last_action(&self) -> &Action {
        &self.last_action
    }

    /// The most recent episode summary (complete once `is_done`).
    pub fn episode(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    pub fn start_sampler(&self) -> StartSampler {
        StartSampler::new(&self.track, self.cfg.start)
    }

    /// Resets from a freshly drawn start state.
    pub fn reset_from_start(&mut self) -> Result<Observation> {
        let s0 = self.start_sampler().sample_reset(&mut self.rng);
        self.reset(&s0)
    }

    /// First waypoint the vehicle at `position` still has to pass: the
    /// nearest one it is on the approach side of, or the first waypoint.
    pub fn infer_cursor(&self, position: &Vec3) -> usize {
        self.track
            .waypoints
            .iter()
            .enumerate()
            .filter(|(_, w)| track::to_local(position, &w.static_pose()).x <= 0.0)
            .min_by(|(_, a), (_, b)| {
                let da = (a.position - position).norm();
                let db = (b.position - position).norm();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn reset(&mut self, s0: &ResetState) -> Result<Observation> {
        if !s0.state.is_finite() {
            return Err(Error::NonFinite("reset state"));
        }
        if (s0.state.orientation.quaternion().norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("reset attitude is not a unit quaternion".into()));
        }
        let cursor = s0
            .waypoint
            .unwrap_or_else(|| self.infer_cursor(&s0.state.position))
            .min(self.track.len() - 1);

        // Per-episode randomization.
        let speed = match self.gate_speed_override {
            Some(s) => s,
            None => {
                let [lo, hi] = self.cfg.gate_speed;
                if hi > lo {
                    self.rng.random_range(lo..=hi)
                } else {
                    lo
                }
            }
        };
        self.waypoints = self.track.waypoints.clone();
        for w in &mut self.waypoints {
            if let Some(a) = self.cfg.gate_amplitude {
                w.osc_amplitude = a;
            }
            w.osc_speed = speed;
            if self.cfg.randomize_phase {
                w.phase = self.rng.random_range(0.0..TAU);
            }
        }
        self.model = self.dynamics.sample_model(&mut self.rng)?;
        self.latency_offset = self.dynamics.randomization.sample_latency_offset(&mut self.rng);

        let pose = self.waypoints[cursor].pose_at(0.0);
        if track::out_of_bounds(&track::to_local(&s0.state.position, &pose), &self.track.bbox) {
            self.done = true;
            return Err(Error::ResetOutOfBounds { waypoint: cursor });
        }

        let period = 1.0 / self.cfg.policy_rate;
        let hold = Command::new(s0.hold_thrust, Vec3::zeros());
        self.latency.prefill(-period, period, hold);
        self.state = s0.state;
        self.cursor = cursor;
        self.steps = 0;
        self.last_action = self.cfg.action.unscale(&hold.to_array());
        self.prev_position = s0.state.position;
        self.last_errors = None;
        self.done = false;
        self.record = EpisodeRecord {
            gates: self.track.len(),
            first_waypoint: cursor,
            completed: vec![false; self.track.len()],
            passes: vec![],
            flight_time: 0.0,
            steps: 0,
            termination: None,
            original_return: 0.0,
            shaped_return: 0.0,
            gate_speed: speed,
        };
        self.trajectory.clear();
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.waypoints, self.cursor, self.time(), &self.last_action)
    }

    fn current_pose(&self, t: f64) -> Pose {
        self.waypoints[self.cursor.min(self.waypoints.len() - 1)].pose_at(t)
    }

    pub fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let mut clamped = false;
        let action: Action = std::array::from_fn(|i| {
            let a = action[i];
            if !a.is_finite() || a.abs() > ACTION_SLACK {
                clamped = true;
            }
            if a.is_nan() {
                0.0
            } else {
                a.clamp(-1.0, 1.0)
            }
        });
        if clamped {
            self.clamp_warnings += 1;
        }
        let cmd = self.cfg.action.to_command(&action);

        let period = 1.0 / self.cfg.policy_rate;
        let t0 = self.steps as f64 * period;
        self.latency.push(t0, cmd)?;
        let window = self.dynamics.randomization.latency_window;
        for s in 0..self.substeps {
            let now = t0 + s as f64 * self.dynamics.dt;
            let eff = self.latency.effective_command(now, self.latency_offset, window)?;
            self.state = dynamics::step(&self.state, &eff, self.dynamics.dt, &self.model, &mut self.rng)
                .map_err(|e| match e {
                    Error::Divergence { state, .. } => Error::Divergence { time: now, state },
                    e => e,
                })?;
        }
        self.steps += 1;
        let t = self.time();

        let w = &self.reward.weights;
        let pose = self.current_pose(t);
        let local_prev = track::to_local(&self.prev_position, &pose);
        let local = track::to_local(&self.state.position, &pose);
        let crossed = track::check_completion(&local_prev, &local, self.track.pass_threshold);
        let aer = reward::aerobatic_reward(&local, &self.state.orientation, &pose, crossed, w);
        let (act, act_change) = reward::smoothness_rewards(&cmd.rates(), &action, &self.last_action);
        let yaw = reward::yaw_reward(&self.state.body_velocity());

        let p_err = local.norm();
        let theta_err = reward::tilt_error(&pose.orientation, &self.state.orientation);
        let shaping = match self.last_errors {
            Some((pl, tl)) => reward::shaping_reward(pl, p_err, tl, theta_err, w.w_sp, w.w_sq),
            None => 0.0,
        };
        self.last_errors = Some((p_err, theta_err));

        let terms = RewardTerms {
            aer,
            act,
            act_change,
            yaw,
            shaping,
        };
        let breakdown = reward::total_reward(&terms, w, self.reward.mode);

        let mut passed = None;
        if crossed {
            let pass = GatePass {
                waypoint: self.cursor,
                time: t,
                p_error: p_err,
                theta_error_deg: theta_err.to_degrees(),
                local: [local.x, local.y, local.z],
            };
            self.record.completed[self.cursor] = true;
            self.record.passes.push(pass);
            passed = Some(pass);
            self.cursor += 1;
            self.last_errors = None;
        }

        let termination = if self.cursor >= self.track.len() {
            Some(Termination::TrackComplete)
        } else if track::out_of_bounds(
            &track::to_local(&self.state.position, &self.current_pose(t)),
            &self.track.bbox,
        ) {
            Some(Termination::OutOfBounds)
        } else if self.steps >= self.cfg.max_steps {
            Some(Termination::StepCap)
        } else {
            None
        };

        self.record.original_return += breakdown.original(w);
        self.record.shaped_return += breakdown.total;
        self.record.steps = self.steps;
        if let Some(term) = termination {
            self.done = true;
            self.record.termination = Some(term);
            self.record.flight_time = t;
        }
        if self.record_trajectory {
            let s = &self.state;
            self.trajectory.push(TrajectoryRow {
                t,
                p: s.position.into(),
                q: [s.orientation.w, s.orientation.i, s.orientation.j, s.orientation.k],
                v: s.velocity.into(),
                w: s.body_rates.into(),
                cmd: cmd.to_array(),
                reward: breakdown.total,
                gate: self.cursor.min(self.track.len() - 1),
            });
        }

        self.prev_position = self.state.position;
        self.last_action = action;
        Ok(Step {
            obs: self.observe(),
            reward: breakdown,
            done: self.done,
            info: StepInfo {
                termination,
                passed,
                cursor: self.cursor,
                clamped,
            },
        })
    }
}
