//! Reverse curriculum over reset states. Goal states at the gates are pushed
//! backward in time through the flat-output model, turned into full vehicle
//! states, and mixed with replayed and nominal starts at reset time.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadState, Quat, Vec3, GRAVITY, THRUST_MAX};
use crate::env::{ResetState, StartSampler};
use crate::error::{Error, Result};
use crate::track::{self, Track};

/// Position, velocity and acceleration of the vehicle's center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatState {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

impl FlatState {
    /// Mass-normalized thrust vector needed to realize `a`.
    pub fn thrust_vector(&self) -> Vec3 {
        self.a - GRAVITY
    }

    /// One step forward under constant jerk `j`.
    pub fn forward(&self, j: &Vec3, dt: f64) -> Self {
        Self {
            p: self.p + self.v * dt + self.a * (0.5 * dt * dt) + j * (dt * dt * dt / 6.0),
            v: self.v + self.a * dt + j * (0.5 * dt * dt),
            a: self.a + j * dt,
        }
    }

    /// One step backward under constant jerk `j`; exact inverse of
    /// [`FlatState::forward`].
    pub fn backward(&self, j: &Vec3, dt: f64) -> Self {
        let a = self.a - j * dt;
        let v = self.v - a * dt - j * (0.5 * dt * dt);
        let p = self.p - v * dt - a * (0.5 * dt * dt) - j * (dt * dt * dt / 6.0);
        Self { p, v, a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub position: Vec3,
    pub orientation: Quat,
    pub velocity: Vec3,
    pub waypoint: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionParams {
    pub steps: usize,
    pub dt: f64,
    /// Per-axis jerk bound, m/s³.
    pub jerk: f64,
    /// Smallest admissible ‖a − g‖.
    pub eps_thrust: f64,
    /// Largest admissible ‖a − g‖.
    pub max_thrust: f64,
    /// Jerk redraws before an expansion is cut short.
    pub retries: usize,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            steps: 200,
            dt: 0.01,
            jerk: 60.0,
            eps_thrust: 0.5,
            max_thrust: THRUST_MAX,
            retries: 16,
        }
    }
}

impl ExpansionParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.dt > 0.0) || !(self.jerk >= 0.0) {
            return Err(Error::Config("expansion needs steps >= 1, dt > 0, jerk >= 0".into()));
        }
        if !(self.eps_thrust > 0.0 && self.max_thrust > self.eps_thrust) {
            return Err(Error::Config("expansion thrust bounds must satisfy 0 < eps < max".into()));
        }
        Ok(())
    }

    fn admissible(&self, f: &FlatState) -> bool {
        let t = f.thrust_vector().norm();
        t >= self.eps_thrust && t <= self.max_thrust && f.p.iter().all(|x| x.is_finite())
    }
}

/// `[curriculum]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub expansion: ExpansionParams,
    pub rho1: f64,
    pub rho2: f64,
    /// Critic-value percentile band treated as moderate difficulty.
    pub band: [f64; 2],
    pub min_seeds: usize,
    /// Upper bound on seeds expanded per update.
    pub max_seeds: usize,
    pub buffer_capacity: usize,
    /// Upper bound on the size of the current reset set.
    pub max_current: usize,
    pub goal_speed: [f64; 2],
    pub goal_thrust: [f64; 2],
    pub goals_per_gate: usize,
    /// Half angle of the cone around the gate's +x axis goal velocities
    /// are drawn from, degrees.
    pub cone_half_angle: f64,
    /// Expand a fresh batch of goals alongside the seeds at every update,
    /// so near-gate starts stay available while the critic is still poor.
    pub refresh_goals: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            expansion: ExpansionParams::default(),
            rho1: 0.5,
            rho2: 0.3,
            band: [40.0, 60.0],
            min_seeds: 8,
            max_seeds: 64,
            buffer_capacity: 50_000,
            max_current: 20_000,
            goal_speed: [1.0, 6.0],
            goal_thrust: [5.0, 15.0],
            goals_per_gate: 16,
            cone_half_angle: 60.0,
            refresh_goals: true,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        self.expansion.validate()?;
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0 && self.rho1 + self.rho2 <= 1.0 + 1e-12) {
            return Err(Error::Config("need rho1, rho2 >= 0 and rho1 + rho2 <= 1".into()));
        }
        let [lo, hi] = self.band;
        if !(0.0 <= lo && lo <= hi && hi <= 100.0) {
            return Err(Error::Config("percentile band must satisfy 0 <= lo <= hi <= 100".into()));
        }
        let [vlo, vhi] = self.goal_speed;
        let [tlo, thi] = self.goal_thrust;
        if !(0.0 <= vlo && vlo <= vhi) || !(0.0 < tlo && tlo <= thi && thi <= THRUST_MAX) {
            return Err(Error::Config("goal speed / thrust ranges are invalid".into()));
        }
        if self.goals_per_gate == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("goals_per_gate and buffer_capacity must be positive".into()));
        }
        if !(0.0..=180.0).contains(&self.cone_half_angle) {
            return Err(Error::Config("cone_half_angle must be within [0, 180] degrees".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Unit vector uniformly distributed over the spherical cap of half angle
/// `half_angle` (radians) around +x.
fn sample_cone<R: Rng + ?Sized>(half_angle: f64, rng: &mut R) -> Vec3 {
    let cos_min = half_angle.cos();
    let c: f64 = if cos_min < 1.0 {
        rng.random_range(cos_min..=1.0)
    } else {
        1.0
    };
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Vec3::new(c, s * phi.cos(), s * phi.sin())
}

/// `n_per_gate` goals at every waypoint's resting pose, with speed drawn
/// from `speed` and direction inside a cone about the gate's +x axis.
pub fn extract_goals<R: Rng + ?Sized>(
    track: &Track,
    speed: [f64; 2],
    n_per_gate: usize,
    cone_half_angle_deg: f64,
    rng: &mut R,
) -> Vec<GoalState> {
    let mut goals = Vec::with_capacity(track.len() * n_per_gate);
    for (i, w) in track.waypoints.iter().enumerate() {
        for _ in 0..n_per_gate {
            let dir = sample_cone(cone_half_angle_deg.to_radians(), rng);
            let v = uniform(rng, speed);
            goals.push(GoalState {
                position: w.position,
                orientation: w.orientation,
                velocity: w.orientation * dir * v,
                waypoint: i,
            });
        }
    }
    goals
}

/// Flat state whose thrust direction reproduces the goal attitude's body z
/// axis with magnitude `thrust`.
pub fn state_to_flat(goal: &GoalState, thrust: f64) -> FlatState {
    FlatState {
        p: goal.position,
        v: goal.velocity,
        a: goal.orientation * Vec3::new(0.0, 0.0, thrust) + GRAVITY,
    }
}

/// Flat state of a simulated vehicle commanding `thrust`.
pub fn quad_to_flat(state: &QuadState, thrust: f64) -> FlatState {
    FlatState {
        p: state.position,
        v: state.velocity,
        a: state.orientation * Vec3::new(0.0, 0.0, thrust) + GRAVITY,
    }
}

/// States visited while walking backward from a flat state, nearest first,
/// with the jerk that carries each one forward to its successor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub flats: Vec<FlatState>,
    pub jerks: Vec<Vec3>,
}

/// Walks `params.steps` steps backward from `flat`, drawing a fresh uniform
/// jerk each step. Draws that leave the thrust bounds are retried; once the
/// retries run out the expansion stops early.
pub fn expand_flats<R: Rng + ?Sized>(flat: &FlatState, params: &ExpansionParams, rng: &mut R) -> Expansion {
    let mut out = Expansion {
        flats: Vec::with_capacity(params.steps),
        jerks: Vec::with_capacity(params.steps),
    };
    let j_max = params.jerk;
    let mut cur = *flat;
    'outer: for _ in 0..params.steps {
        for _ in 0..=params.retries {
            let j = if j_max > 0.0 {
                Vec3::from_fn(|_, _| rng.random_range(-j_max..=j_max))
            } else {
                Vec3::zeros()
            };
            let prev = cur.backward(&j, params.dt);
            if params.admissible(&prev) {
                out.flats.push(prev);
                out.jerks.push(j);
                cur = prev;
                continue 'outer;
            }
        }
        break;
    }
    out
}

/// Full state from a flat state: body z along the thrust vector, heading
/// from the velocity, zero body rates.
pub fn flat_to_state(flat: &FlatState, eps: f64) -> Result<QuadState> {
    let t = flat.thrust_vector();
    let n = t.norm();
    if !(n >= eps) {
        return Err(Error::Config(format!("flat state thrust {n} below {eps}")));
    }
    let z = t / n;
    let mut x = flat.v - z * flat.v.dot(&z);
    if x.norm() < 1e-6 {
        x = Vec3::x() - z * z.x;
        if x.norm() < 1e-6 {
            x = Vec3::y() - z * z.y;
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(QuadState {
        position: flat.p,
        orientation: UnitQuaternion::from_rotation_matrix(&rot),
        velocity: flat.v,
        body_rates: Vec3::zeros(),
    })
}

/// Reset entry for a flat state heading to `waypoint`, holding the thrust
/// consistent with its acceleration.
pub fn flat_to_reset(flat: &FlatState, waypoint: usize, eps: f64) -> Result<ResetState> {
    Ok(ResetState {
        state: flat_to_state(flat, eps)?,
        waypoint: Some(waypoint),
        hold_thrust: flat.thrust_vector().norm().min(THRUST_MAX),
    })
}

/// Indices of `values` lying within the `band` percentile slice. The band is
/// widened by 5 points on both sides until at least `min_count` entries are
/// in it (or it covers everything).
pub fn select_band(values: &[f64], band: [f64; 2], min_count: usize) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return vec![];
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let [mut lo, mut hi] = band;
    loop {
        let i_lo = ((lo / 100.0) * n as f64).floor() as usize;
        let i_hi = (((hi / 100.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        let (v_lo, v_hi) = (sorted[i_lo.min(n - 1)], sorted[i_hi.max(i_lo.min(n - 1))]);
        let picked: Vec<usize> = (0..n).filter(|&i| values[i] >= v_lo && values[i] <= v_hi).collect();
        if picked.len() >= min_count.min(n) || (lo <= 0.0 && hi >= 100.0) {
            return picked;
        }
        lo = (lo - 5.0).max(0.0);
        hi = (hi + 5.0).min(100.0);
    }
}

/// Scores `states` with `critic` and keeps those of moderate value.
pub fn evaluate_and_select<T: Clone>(
    states: &[T],
    mut critic: impl FnMut(&[T]) -> Result<Vec<f64>>,
    band: [f64; 2],
    min_count: usize,
) -> Result<Vec<T>> {
    let values = critic(states)?;
    if values.len() != states.len() {
        return Err(Error::Config("critic returned the wrong number of values".into()));
    }
    Ok(select_band(&values, band, min_count)
        .into_iter()
        .map(|i| states[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetSource {
    Current,
    Buffer,
    Start,
}

pub const SNAPSHOT_VERSION: u32 = 1;

/// Current frontier, replay archive, and the mixing probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetSets {
    pub rho1: f64,
    pub rho2: f64,
    pub capacity: usize,
    pub current: Vec<ResetState>,
    pub buffer: VecDeque<ResetState>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    sets: ResetSets,
}

impl ResetSets {
    pub fn new(rho1: f64, rho2: f64, capacity: usize) -> Self {
        Self {
            rho1,
            rho2,
            capacity: capacity.max(1),
            current: vec![],
            buffer: VecDeque::new(),
        }
    }

    /// Replaces the current set and archives its members.
    pub fn set_current(&mut self, states: Vec<ResetState>) {
        for s in &states {
            if self.buffer.len() == self.capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(*s);
        }
        self.current = states;
    }

    pub fn choose_source<R: Rng + ?Sized>(&self, rng: &mut R) -> ResetSource {
        let rho: f64 = rng.random();
        if rho < self.rho1 {
            ResetSource::Current
        } else if rho < self.rho1 + self.rho2 {
            ResetSource::Buffer
        } else {
            ResetSource::Start
        }
    }

    /// Draws a reset state. Empty sets fall through to the start sampler.
    pub fn sample_reset<R: Rng + ?Sized>(&self, start: &StartSampler, rng: &mut R) -> (ResetState, ResetSource) {
        match self.choose_source(rng) {
            ResetSource::Current if !self.current.is_empty() => {
                (self.current[rng.random_range(0..self.current.len())], ResetSource::Current)
            }
            ResetSource::Buffer if !self.buffer.is_empty() => {
                (self.buffer[rng.random_range(0..self.buffer.len())], ResetSource::Buffer)
            }
            _ => (start.sample_reset(rng), ResetSource::Start),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&Snapshot {
            version: SNAPSHOT_VERSION,
            sets: self.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Checkpoint(format!(
                "reset-set snapshot version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        Ok(snap.sets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A state seen during training, kept as a candidate seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visited {
    pub reset: ResetState,
    pub obs: crate::env::Observation,
}

/// Goal extraction, expansion and reset-set maintenance for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub cfg: CurriculumConfig,
    pub sets: ResetSets,
}

impl Curriculum {
    pub fn new(cfg: CurriculumConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sets: ResetSets::new(cfg.rho1, cfg.rho2, cfg.buffer_capacity),
            cfg,
        })
    }

    /// Every expanded state that is still inside its target gate's box,
    /// capped at `max_current` by uniform subsampling.
    fn expand_to_resets<R: Rng + ?Sized>(
        &self,
        track: &Track,
        roots: &[(FlatState, usize)],
        rng: &mut R,
    ) -> Vec<ResetState> {
        let p = &self.cfg.expansion;
        let mut out = Vec::new();
        for (flat, wp) in roots {
            let pose = track.waypoints[*wp].static_pose();
            for f in expand_flats(flat, p, rng).flats {
                if track::out_of_bounds(&track::to_local(&f.p, &pose), &track.bbox) {
                    continue;
                }
                if let Ok(r) = flat_to_reset(&f, *wp, p.eps_thrust) {
                    out.push(r);
                }
            }
        }
        if out.len() > self.cfg.max_current {
            out.shuffle(rng);
            out.truncate(self.cfg.max_current);
        }
        out
    }

    fn goal_roots<R: Rng + ?Sized>(&self, track: &Track, rng: &mut R) -> Vec<(FlatState, usize)> {
        let goals = extract_goals(
            track,
            self.cfg.goal_speed,
            self.cfg.goals_per_gate,
            self.cfg.cone_half_angle,
            rng,
        );
        goals
            .iter()
            .map(|g| (state_to_flat(g, uniform(rng, self.cfg.goal_thrust)), g.waypoint))
            .collect()
    }

    /// Seeds the current set by expanding backward from goals at every gate.
    pub fn init_from_goals<R: Rng + ?Sized>(&mut self, track: &Track, rng: &mut R) -> usize {
        let roots = self.goal_roots(track, rng);
        let states = self.expand_to_resets(track, &roots, rng);
        let n = states.len();
        self.sets.set_current(states);
        n
    }

    /// Picks moderate-value seeds among `visited` and expands backward from
    /// them. Returns the number of seeds used; the current set is left alone
    /// when nothing is selected.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        track: &Track,
        visited: &[Visited],
        critic: impl FnMut(&[Visited]) -> Result<Vec<f64>>,
        rng: &mut R,
    ) -> Result<usize> {
        if visited.is_empty() {
            return Ok(0);
        }
        let mut seeds = evaluate_and_select(visited, critic, self.cfg.band, self.cfg.min_seeds)?;
        if seeds.len() > self.cfg.max_seeds {
            seeds.shuffle(rng);
            seeds.truncate(self.cfg.max_seeds);
        }
        let mut roots: Vec<_> = seeds
            .iter()
            .filter_map(|s| {
                let f = quad_to_flat(&s.reset.state, s.reset.hold_thrust);
                let wp = s.reset.waypoint?;
                self.cfg.expansion.admissible(&f).then_some((f, wp))
            })
            .collect();
        let n_seeds = roots.len();
        if self.cfg.refresh_goals && n_seeds > 0 {
            roots.extend(self.goal_roots(track, rng));
        }
        let mut states = self.expand_to_resets(track, &roots, rng);
        if states.is_empty() {
            return Ok(0);
        }
        // Seeds are themselves valid frontier states.
        states.extend(seeds.iter().map(|s| s.reset));
        self.sets.set_current(states);
        Ok(n_seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn goal(q: Quat) -> GoalState {
        GoalState {
            position: Vec3::zeros(),
            orientation: q,
            velocity: Vec3::new(1.0, 0.0, 0.0),
            waypoint: 0,
        }
    }

    #[test]
    fn zero_speed_goals_sit_at_gate_centers() {
        let t = track::fixture("powerloop").unwrap();
        let goals = extract_goals(&t, [0.0, 0.0], 3, 60.0, &mut rng());
        assert_eq!(goals.len(), 12);
        for g in goals {
            assert_eq!(g.velocity, Vec3::zeros());
            assert_eq!(g.position, t.waypoints[g.waypoint].position);
        }
    }

    #[test]
    fn single_gate_goals_pinned() {
        let t = track::fixture("splits-single").unwrap();
        let goals = extract_goals(&t, [1.0, 6.0], 5, 60.0, &mut rng());
        assert_eq!(goals.len(), 5);
        assert!(goals.iter().all(|g| g.position == t.waypoints[0].position));
    }

    #[test]
    fn goal_speeds_and_cone_respected() {
        let t = track::fixture("barrelroll").unwrap();
        let goals = extract_goals(&t, [1.0, 6.0], 2500, 60.0, &mut rng());
        assert_eq!(goals.len(), 10_000);
        for g in goals {
            let s = g.velocity.norm();
            assert!((1.0 - 1e-12..=6.0 + 1e-12).contains(&s));
            let local = g.orientation.inverse() * g.velocity / s;
            assert!(local.x >= 0.5 - 1e-9, "outside 60 degree cone: {local:?}");
        }
    }

    #[test]
    fn hover_and_inverted_goal_accelerations() {
        let f = state_to_flat(&goal(Quat::identity()), 9.81);
        assert!(f.a.norm() < 1e-12);
        let inv = Quat::from_axis_angle(&Vec3::x_axis(), PI);
        let f = state_to_flat(&goal(inv), 9.81);
        assert_relative_eq!(f.a, Vec3::new(0.0, 0.0, -19.62), epsilon = 1e-12);
    }

    #[test]
    fn backward_step_examples() {
        let p = ExpansionParams::default();
        let f = FlatState {
            p: Vec3::zeros(),
            v: Vec3::new(1.0, 0.0, 0.0),
            a: Vec3::zeros(),
        };
        let b = f.backward(&Vec3::zeros(), p.dt);
        assert_relative_eq!(b.p, Vec3::new(-0.01, 0.0, 0.0), epsilon = 1e-15);

        let f = FlatState {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            a: Vec3::new(1.0, 0.0, 0.0),
        };
        let b = f.backward(&Vec3::zeros(), p.dt);
        assert_relative_eq!(b.v, Vec3::new(-0.01, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(b.p, Vec3::new(5e-5, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn expansion_reaches_full_length() {
        let p = ExpansionParams::default();
        let f = state_to_flat(&goal(Quat::identity()), 9.81);
        let e = expand_flats(&f, &p, &mut rng());
        assert_eq!(e.flats.len(), p.steps);
        assert_eq!(e.jerks.len(), p.steps);
    }

    #[test]
    fn expansion_stops_when_thrust_infeasible() {
        // Zero jerk keeps a = g, so every backward state is thrust-free.
        let p = ExpansionParams {
            jerk: 0.0,
            retries: 3,
            ..Default::default()
        };
        let f = FlatState {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            a: GRAVITY,
        };
        assert!(expand_flats(&f, &p, &mut rng()).flats.is_empty());
    }

    #[test]
    fn flat_to_state_examples() {
        let s = flat_to_state(
            &FlatState {
                p: Vec3::zeros(),
                v: Vec3::new(1.0, 0.0, 0.0),
                a: Vec3::zeros(),
            },
            0.1,
        )
        .unwrap();
        assert_relative_eq!(s.orientation * Vec3::z(), Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(s.orientation * Vec3::x(), Vec3::x(), epsilon = 1e-12);

        let s = flat_to_state(
            &FlatState {
                p: Vec3::zeros(),
                v: Vec3::new(1.0, 0.0, 0.0),
                a: Vec3::new(0.0, 0.0, -19.62),
            },
            0.1,
        )
        .unwrap();
        assert_relative_eq!(s.orientation * Vec3::z(), -Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(s.orientation * Vec3::x(), Vec3::x(), epsilon = 1e-12);
        assert_eq!(s.body_rates, Vec3::zeros());
    }

    #[test]
    fn heading_fallback_for_vertical_velocity() {
        let s = flat_to_state(
            &FlatState {
                p: Vec3::zeros(),
                v: Vec3::new(0.0, 0.0, 3.0),
                a: Vec3::zeros(),
            },
            0.1,
        )
        .unwrap();
        assert_relative_eq!(s.orientation * Vec3::x(), Vec3::x(), epsilon = 1e-12);
        // Thrust along world x with no velocity: the x fallback is degenerate too.
        let s = flat_to_state(
            &FlatState {
                p: Vec3::zeros(),
                v: Vec3::zeros(),
                a: Vec3::new(20.0, 0.0, -9.81),
            },
            0.1,
        )
        .unwrap();
        assert_relative_eq!(s.orientation * Vec3::z(), Vec3::x(), epsilon = 1e-12);
        assert_relative_eq!(s.orientation * Vec3::x(), Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_thrust_rejected() {
        let f = FlatState {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            a: GRAVITY,
        };
        assert!(flat_to_state(&f, 0.1).is_err());
    }

    #[test]
    fn band_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let sel: Vec<f64> = select_band(&v, [40.0, 60.0], 1).into_iter().map(|i| v[i]).collect();
        assert_eq!(sel, (41..=60).map(f64::from).collect::<Vec<_>>());

        let same = vec![2.5; 17];
        assert_eq!(select_band(&same, [40.0, 60.0], 1).len(), 17);
    }

    #[test]
    fn band_widens_to_minimum() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let sel = select_band(&v, [50.0, 50.0], 30);
        assert!(sel.len() >= 30);
        assert!(select_band(&v[..3], [50.0, 50.0], 10).len() == 3);
    }

    #[test]
    fn source_branches_degenerate() {
        let start = StartSampler::new(&track::fixture("splits-single").unwrap(), Default::default());
        let mut r = rng();
        let mut sets = ResetSets::new(0.0, 0.0, 10);
        sets.set_current(vec![ResetState::start(QuadState::at_rest(Vec3::new(1.0, 2.0, 3.0)))]);
        for _ in 0..1000 {
            assert_eq!(sets.sample_reset(&start, &mut r).1, ResetSource::Start);
        }
        sets.rho1 = 1.0;
        for _ in 0..1000 {
            assert_eq!(sets.sample_reset(&start, &mut r).1, ResetSource::Current);
        }
        let empty = ResetSets::new(1.0, 0.0, 10);
        assert_eq!(empty.sample_reset(&start, &mut r).1, ResetSource::Start);
    }

    #[test]
    fn buffer_keeps_history_and_evicts_oldest() {
        let mk = |x: f64| ResetState::start(QuadState::at_rest(Vec3::new(x, 0.0, 0.0)));
        let mut sets = ResetSets::new(0.5, 0.3, 5);
        sets.set_current((0..3).map(|i| mk(i as f64)).collect());
        sets.set_current((3..5).map(|i| mk(i as f64)).collect());
        assert_eq!(sets.buffer.len(), 5);
        sets.set_current(vec![mk(5.0)]);
        let xs: Vec<f64> = sets.buffer.iter().map(|s| s.state.position.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let mut sets = ResetSets::new(0.5, 0.3, 100);
        sets.set_current(vec![ResetState::start(QuadState::at_rest(Vec3::new(1.0, 2.0, 3.0)))]);
        let text = sets.to_json().unwrap();
        assert_eq!(ResetSets::from_json(&text).unwrap(), sets);
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(ResetSets::from_json(&bumped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn init_fills_current_within_bounds() {
        let t = track::fixture("splits").unwrap();
        let mut c = Curriculum::new(CurriculumConfig {
            goals_per_gate: 2,
            ..Default::default()
        })
        .unwrap();
        let n = c.init_from_goals(&t, &mut rng());
        assert!(n > 0);
        for r in &c.sets.current {
            let wp = r.waypoint.unwrap();
            let local = track::to_local(&r.state.position, &t.waypoints[wp].static_pose());
            assert!(!track::out_of_bounds(&local, &t.bbox));
            assert!(r.hold_thrust > 0.0 && r.hold_thrust <= THRUST_MAX);
        }
        assert_eq!(c.sets.buffer.len(), n);
    }

    #[test]
    fn config_validation() {
        assert!(CurriculumConfig::default().validate().is_ok());
        let bad = CurriculumConfig {
            rho1: 0.8,
            rho2: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_vec(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn forward_inverts_backward(p in arb_vec(10.0), v in arb_vec(6.0), a in arb_vec(10.0), j in arb_vec(60.0)) {
            let f = FlatState { p, v, a };
            let back = f.forward(&j, 0.01).backward(&j, 0.01);
            prop_assert!((back.p - p).norm() < 1e-12);
            prop_assert!((back.v - v).norm() < 1e-12);
            prop_assert!((back.a - a).norm() < 1e-12);
        }

        #[test]
        fn recovered_body_z_matches_thrust(v in arb_vec(6.0), a in arb_vec(9.0)) {
            let f = FlatState { p: Vec3::zeros(), v, a };
            prop_assume!(f.thrust_vector().norm() > 0.5);
            let s = flat_to_state(&f, 0.5).unwrap();
            let z = s.orientation * Vec3::z();
            prop_assert!((z - f.thrust_vector().normalize()).norm() < 1e-9);
            let r = s.orientation.to_rotation_matrix();
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn selection_affine_invariant(vals in proptest::collection::vec(-100.0f64..100.0, 1..200), s in 0.1f64..10.0, o in -50.0f64..50.0) {
            let scaled: Vec<f64> = vals.iter().map(|x| s * x + o).collect();
            prop_assert_eq!(select_band(&vals, [40.0, 60.0], 3), select_band(&scaled, [40.0, 60.0], 3));
        }

        #[test]
        fn expanded_distance_bounded(seed in 0u64..1000, speed in 0.0f64..6.0, thrust in 5.0f64..15.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let g = GoalState { velocity: Vec3::new(speed, 0.0, 0.0), ..goal(Quat::from_euler_angles(0.3, -0.4, 0.2)) };
            let f = state_to_flat(&g, thrust);
            let p = ExpansionParams::default();
            let e = expand_flats(&f, &p, &mut r);
            for (k, s) in e.flats.iter().enumerate() {
                let t = (k + 1) as f64 * p.dt;
                for i in 0..3 {
                    let bound = f.v[i].abs() * t + 0.5 * f.a[i].abs() * t * t + p.jerk * t.powi(3) / 6.0;
                    prop_assert!((s.p[i] - f.p[i]).abs() <= bound + 1e-9);
                }
            }
        }
    }
}
