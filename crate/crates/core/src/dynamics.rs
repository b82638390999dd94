//! Rigid-body quadrotor model driven by collective thrust and body-rate commands.
//!
//! Translation follows the ideal point-mass equations with gravity and a
//! quadratic parasitic drag term. Rotation is driven by an inner rate loop
//! modelled as a first-order lag, so the torque path of the full rigid-body
//! equations is not integrated on the default action path.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Gravitational acceleration, world frame (z up).
pub const GRAVITY: Vec3 = Vector3::new(0.0, 0.0, -9.81);

pub const THRUST_MIN: f64 = 0.0;
pub const THRUST_MAX: f64 = 20.0;
pub const ROLL_PITCH_RATE_MAX: f64 = 5.0;
pub const YAW_RATE_MAX: f64 = 3.14;

/// Full rigid-body state. Position and velocity live in the world frame,
/// body rates in the body frame, and the orientation maps body to world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    pub orientation: Quat,
    pub velocity: Vec3,
    pub body_rates: Vec3,
}

impl QuadState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            orientation: Quat::identity(),
            velocity: Vec3::zeros(),
            body_rates: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.body_rates.iter().all(|x| x.is_finite())
    }

    /// Velocity expressed in the body frame.
    pub fn body_velocity(&self) -> Vec3 {
        self.orientation.inverse_transform_vector(&self.velocity)
    }

    /// Body z axis expressed in the world frame (the thrust direction).
    pub fn body_z(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }
}

/// Mass-normalized collective thrust (m/s²) plus commanded body rates (rad/s).
/// Values are clamped to the actuator envelope on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    thrust: f64,
    rates: Vec3,
}

impl Command {
    pub fn new(thrust: f64, rates: Vec3) -> Self {
        Self {
            thrust: thrust.clamp(THRUST_MIN, THRUST_MAX),
            rates: Vec3::new(
                rates.x.clamp(-ROLL_PITCH_RATE_MAX, ROLL_PITCH_RATE_MAX),
                rates.y.clamp(-ROLL_PITCH_RATE_MAX, ROLL_PITCH_RATE_MAX),
                rates.z.clamp(-YAW_RATE_MAX, YAW_RATE_MAX),
            ),
        }
    }

    pub fn hover() -> Self {
        Self::new(-GRAVITY.z, Vec3::zeros())
    }

    pub fn thrust(&self) -> f64 {
        self.thrust
    }

    pub fn rates(&self) -> Vec3 {
        self.rates
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.thrust, self.rates.x, self.rates.y, self.rates.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], Vec3::new(a[1], a[2], a[3]))
    }

    /// Multiplies every channel by an independent factor drawn from
    /// `1 ± fraction`.
    pub fn jittered<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Self {
        let mut a = self.to_array();
        for x in a.iter_mut() {
            *x *= 1.0 + rng.random_range(-fraction..=fraction);
        }
        Self::from_array(a)
    }
}

/// Diagonal parasitic drag coefficients in the body frame, 1/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DragModel {
    pub coeffs: Vec3,
}

impl DragModel {
    pub fn new(coeffs: Vec3) -> Result<Self> {
        if coeffs.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(format!(
                "drag coefficients must be finite and non-negative, got {coeffs:?}"
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn none() -> Self {
        Self {
            coeffs: Vec3::zeros(),
        }
    }

    /// Each coefficient scaled independently by a factor in `1 ± fraction`.
    pub fn sample<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Self {
        let coeffs = self
            .coeffs
            .map(|d| d * (1.0 + rng.random_range(-fraction..=fraction)));
        Self { coeffs }
    }
}

impl Default for DragModel {
    fn default() -> Self {
        Self {
            coeffs: Vec3::new(0.02, 0.02, 0.04),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub drag_jitter: f64,
    pub command_jitter: f64,
    pub latency_offset_range: [f64; 2],
    pub latency_window: f64,
    pub randomize_drag: bool,
    pub randomize_command: bool,
    pub randomize_latency: bool,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            drag_jitter: 0.5,
            command_jitter: 0.2,
            latency_offset_range: [0.004, 0.036],
            latency_window: 0.080,
            randomize_drag: true,
            randomize_command: true,
            randomize_latency: true,
        }
    }
}

impl RandomizationConfig {
    /// All perturbations off. The latency window stays in place with the
    /// offset pinned to the low end of its range.
    pub fn disabled() -> Self {
        Self {
            randomize_drag: false,
            randomize_command: false,
            randomize_latency: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.drag_jitter) || !frac_ok(self.command_jitter) {
            return Err(Error::Config(
                "jitter fractions must lie in [0, 1)".to_string(),
            ));
        }
        let [lo, hi] = self.latency_offset_range;
        if !(self.latency_window >= 0.0 && lo >= 0.0 && lo <= hi && hi <= self.latency_window) {
            return Err(Error::Config(format!(
                "latency offset range [{lo}, {hi}] must lie within [0, {}]",
                self.latency_window
            )));
        }
        Ok(())
    }

    pub fn sample_latency_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let [lo, hi] = self.latency_offset_range;
        if self.randomize_latency && hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    pub fn sample_drag<R: Rng + ?Sized>(&self, nominal: &DragModel, rng: &mut R) -> DragModel {
        if self.randomize_drag {
            nominal.sample(self.drag_jitter, rng)
        } else {
            *nominal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaParams {
    pub inertia: Matrix3<f64>,
    pub gravity: Vec3,
}

impl Default for InertiaParams {
    fn default() -> Self {
        Self {
            inertia: Matrix3::from_diagonal(&Vec3::new(0.0025, 0.0025, 0.0045)),
            gravity: GRAVITY,
        }
    }
}

impl InertiaParams {
    pub fn validate(&self) -> Result<()> {
        let j = &self.inertia;
        if (j - j.transpose()).abs().max() > 1e-12 || j.cholesky().is_none() {
            return Err(Error::Config(
                "inertia matrix must be symmetric positive definite".to_string(),
            ));
        }
        Ok(())
    }

    /// Euler's rotation equation, J⁻¹(τ − ω × Jω). Only used when torques are
    /// modelled explicitly; the rate-command path bypasses it.
    pub fn angular_acceleration(&self, body_rates: &Vec3, torque: &Vec3) -> Vec3 {
        let jw = self.inertia * body_rates;
        let inv = self
            .inertia
            .try_inverse()
            .expect("inertia validated as positive definite");
        inv * (torque - body_rates.cross(&jw))
    }
}

/// Per-episode physical parameters used by [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightModel {
    pub drag: DragModel,
    pub rate_time_constant: f64,
    /// Multiplicative actuator jitter fraction, `None` when disabled.
    pub command_jitter: Option<f64>,
}

impl FlightModel {
    pub fn ideal(rate_time_constant: f64) -> Self {
        Self {
            drag: DragModel::none(),
            rate_time_constant,
            command_jitter: None,
        }
    }
}

/// `[dynamics]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Physics integration step, seconds.
    pub dt: f64,
    pub rate_time_constant: f64,
    /// Nominal body-frame drag coefficients, 1/m.
    pub drag: [f64; 3],
    pub randomization: RandomizationConfig,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.0025,
            rate_time_constant: 0.05,
            drag: [0.02, 0.02, 0.04],
            randomization: RandomizationConfig::default(),
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.02) {
            return Err(Error::Config(format!("dynamics.dt = {} outside (0, 0.02]", self.dt)));
        }
        if !(self.rate_time_constant > 0.0) {
            return Err(Error::Config("rate_time_constant must be positive".into()));
        }
        self.nominal_drag()?;
        self.randomization.validate()
    }

    pub fn nominal_drag(&self) -> Result<DragModel> {
        DragModel::new(Vec3::from(self.drag))
    }

    /// Draws the per-episode flight model.
    pub fn sample_model<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FlightModel> {
        let r = &self.randomization;
        Ok(FlightModel {
            drag: r.sample_drag(&self.nominal_drag()?, rng),
            rate_time_constant: self.rate_time_constant,
            command_jitter: r.randomize_command.then_some(r.command_jitter),
        })
    }
}

/// Rotates `v` from the body frame into the world frame.
pub fn quat_rotate(q: &Quat, v: &Vec3) -> Result<Vec3> {
    if !q.coords.iter().chain(v.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("quat_rotate"));
    }
    Ok(q * v)
}

/// Drag acceleration `−R D Rᵀ ‖v‖ v` for world-frame velocity `v`.
pub fn apply_drag(q: &Quat, v: &Vec3, drag: &DragModel) -> Vec3 {
    let speed = v.norm();
    if speed == 0.0 {
        return Vec3::zeros();
    }
    let v_body = q.inverse_transform_vector(v);
    let f_body = -drag.coeffs.component_mul(&v_body) * speed;
    q * f_body
}

/// One step of the first-order rate tracking loop. Never overshoots the
/// commanded rate.
pub fn inner_loop_rates(rates: &Vec3, commanded: &Vec3, dt: f64, time_constant: f64) -> Vec3 {
    let alpha = (dt / time_constant).min(1.0);
    rates + (commanded - rates) * alpha
}

/// Advances the state by `dt` under `cmd`.
///
/// Translation uses the constant-acceleration update over the step, so the
/// drag-free motion with a fixed attitude is integrated exactly. The
/// attitude is advanced with the freshly updated body rates and renormalized.
pub fn step<R: Rng + ?Sized>(
    state: &QuadState,
    cmd: &Command,
    dt: f64,
    model: &FlightModel,
    rng: &mut R,
) -> Result<QuadState> {
    let cmd = match model.command_jitter {
        Some(f) if f > 0.0 => cmd.jittered(f, rng),
        _ => *cmd,
    };
    let q = &state.orientation;
    let acc = q * Vec3::new(0.0, 0.0, cmd.thrust)
        + GRAVITY
        + apply_drag(q, &state.velocity, &model.drag);

    let position = state.position + state.velocity * dt + acc * (0.5 * dt * dt);
    let velocity = state.velocity + acc * dt;
    let body_rates = inner_loop_rates(&state.body_rates, &cmd.rates, dt, model.rate_time_constant);

    let omega = Quaternion::from_imag(body_rates);
    let qdot = q.quaternion() * omega * 0.5;
    let orientation = UnitQuaternion::new_normalize(q.quaternion() + qdot * dt);

    let next = QuadState {
        position,
        orientation,
        velocity,
        body_rates,
    };
    if !next.is_finite() {
        return Err(Error::Divergence {
            time: dt,
            state: Box::new(next),
        });
    }
    Ok(next)
}

const WINDOW_EPS: f64 = 1e-9;

/// History of issued commands used to emulate transport latency.
#[derive(Debug, Clone)]
pub struct LatencyBuffer {
    entries: VecDeque<(f64, Command)>,
    capacity: usize,
}

impl LatencyBuffer {
    /// Smallest capacity that always covers a window of `window` seconds
    /// ending `max_offset` seconds in the past, for commands issued every
    /// `period` seconds.
    pub fn capacity_for(max_offset: f64, window: f64, period: f64) -> usize {
        ((max_offset + window) / period).ceil() as usize + 2
    }

    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, time: f64, cmd: Command) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back() {
            if time <= last {
                return Err(Error::NonMonotonicTimestamp { last, next: time });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((time, cmd));
        Ok(())
    }

    /// Fills the whole buffer with `cmd`, the newest copy stamped at `now`.
    pub fn prefill(&mut self, now: f64, period: f64, cmd: Command) {
        self.entries.clear();
        for i in (0..self.capacity).rev() {
            self.entries.push_back((now - i as f64 * period, cmd));
        }
    }

    /// Mean of the commands stamped in `(now − offset − window, now − offset]`.
    /// A zero-length window picks the newest command at or before
    /// `now − offset`.
    pub fn effective_command(&self, now: f64, offset: f64, window: f64) -> Result<Command> {
        let hi = now - offset;
        let lo = hi - window;
        if window <= 0.0 {
            return self
                .entries
                .iter()
                .rev()
                .find(|(t, _)| *t <= hi + WINDOW_EPS)
                .map(|(_, c)| *c)
                .ok_or(Error::EmptyLatencyWindow { lo, hi });
        }
        let mut sum = [0.0; 4];
        let mut n = 0usize;
        for (t, c) in &self.entries {
            if *t > lo + WINDOW_EPS && *t <= hi + WINDOW_EPS {
                for (s, x) in sum.iter_mut().zip(c.to_array()) {
                    *s += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyLatencyWindow { lo, hi });
        }
        Ok(Command::from_array(sum.map(|s| s / n as f64)))
    }
}
