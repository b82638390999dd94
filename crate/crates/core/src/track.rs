//! Aerobatic tracks: ordered SE(3) waypoints that may oscillate along their
//! local Y axis, plus the gate-pass and bounding-box predicates.

use std::f64::consts::TAU;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Quat, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec3,
    pub orientation: Quat,
    /// Oscillation direction in the waypoint's local frame.
    pub osc_axis: Vec3,
    pub osc_amplitude: f64,
    pub osc_speed: f64,
    pub phase: f64,
}

/// A waypoint pose at a given instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Waypoint {
    pub fn fixed(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
            osc_axis: Vec3::y(),
            osc_amplitude: 0.0,
            osc_speed: 0.0,
            phase: 0.0,
        }
    }

    pub fn with_oscillation(mut self, amplitude: f64, speed: f64, phase: f64) -> Self {
        self.osc_amplitude = amplitude;
        self.osc_speed = speed;
        self.phase = phase;
        self
    }

    pub fn static_pose(&self) -> Pose {
        Pose {
            position: self.position,
            orientation: self.orientation,
        }
    }

    /// Oscillation period in seconds, `None` for a static waypoint.
    pub fn period(&self) -> Option<f64> {
        (self.osc_amplitude > 0.0 && self.osc_speed > 0.0)
            .then(|| 4.0 * self.osc_amplitude / self.osc_speed)
    }

    /// Signed displacement along the oscillation axis at time `t`: a
    /// constant-speed triangle wave starting at the center moving towards
    /// `+amplitude`. `phase` shifts the wave by `phase / 2π` periods.
    pub fn displacement_at(&self, t: f64) -> f64 {
        let Some(period) = self.period() else {
            return 0.0;
        };
        let a = self.osc_amplitude;
        let u = (t + self.phase / TAU * period).rem_euclid(period);
        let quarter = period / 4.0;
        if u <= quarter {
            self.osc_speed * u
        } else if u <= 3.0 * quarter {
            a - self.osc_speed * (u - quarter)
        } else {
            -a + self.osc_speed * (u - 3.0 * quarter)
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let d = self.displacement_at(t);
        Pose {
            position: self.position + self.orientation * (self.osc_axis * d),
            orientation: self.orientation,
        }
    }
}

pub fn waypoint_pose_at(w: &Waypoint, t: f64) -> Pose {
    w.pose_at(t)
}

/// World position expressed in the waypoint frame.
pub fn to_local(position: &Vec3, pose: &Pose) -> Vec3 {
    pose.orientation
        .inverse_transform_vector(&(position - pose.position))
}

pub fn to_world(local: &Vec3, pose: &Pose) -> Vec3 {
    pose.position + pose.orientation * local
}

/// True when the local x coordinate went from `≤ 0` to `> 0` during the step
/// and the current lateral offsets are within the pass threshold.
pub fn check_completion(prev: &Vec3, cur: &Vec3, threshold: f64) -> bool {
    cur.x > 0.0 && prev.x <= 0.0 && cur.y.abs() <= threshold && cur.z.abs() <= threshold
}

pub fn out_of_bounds(local: &Vec3, half_extents: &Vec3) -> bool {
    local
        .iter()
        .zip(half_extents.iter())
        .any(|(x, h)| x.abs() > *h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub name: String,
    pub waypoints: Vec<Waypoint>,
    pub pass_threshold: f64,
    pub bbox: Vec3,
    /// Center of the default start region.
    pub start: Vec3,
}

impl Track {
    pub fn new(
        name: impl Into<String>,
        waypoints: Vec<Waypoint>,
        pass_threshold: f64,
        bbox: Vec3,
        start: Vec3,
    ) -> Result<Self> {
        let track = Self {
            name: name.into(),
            waypoints,
            pass_threshold,
            bbox,
            start,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Config("track needs at least one waypoint".into()));
        }
        if !(self.pass_threshold > 0.0) {
            return Err(Error::Config("pass threshold L must be positive".into()));
        }
        if self.bbox.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("bounding box half-extents must be positive".into()));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if (w.orientation.quaternion().norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("waypoint {i}: orientation not unit")));
            }
            if w.osc_amplitude < 0.0 || w.osc_speed < 0.0 {
                return Err(Error::Config(format!(
                    "waypoint {i}: oscillation amplitude and speed must be non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Copy with every waypoint oscillating at `speed` (amplitudes kept).
    pub fn with_gate_speed(&self, speed: f64) -> Self {
        let mut t = self.clone();
        for w in &mut t.waypoints {
            w.osc_speed = speed;
        }
        t
    }

    pub fn from_spec(spec: &TrackSpec) -> Result<Self> {
        if let Some(name) = &spec.fixture {
            let mut track = fixture(name)?;
            if let Some(l) = spec.pass_threshold {
                track.pass_threshold = l;
            }
            if let Some(b) = spec.bbox {
                track.bbox = Vec3::from(b);
            }
            if let Some(s) = spec.start {
                track.start = Vec3::from(s);
            }
            track.validate()?;
            return Ok(track);
        }
        let waypoints = spec
            .waypoints
            .iter()
            .map(WaypointSpec::to_waypoint)
            .collect::<Result<Vec<_>>>()?;
        Track::new(
            spec.name.clone().unwrap_or_else(|| "custom".into()),
            waypoints,
            spec.pass_threshold.unwrap_or(DEFAULT_PASS_THRESHOLD),
            Vec3::from(spec.bbox.unwrap_or(DEFAULT_BBOX)),
            Vec3::from(spec.start.unwrap_or([0.0; 3])),
        )
    }
}

pub const DEFAULT_PASS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BBOX: [f64; 3] = [8.0, 8.0, 8.0];

/// Serialized waypoint as it appears in track files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub position: [f64; 3],
    pub quat_wxyz: [f64; 4],
    #[serde(default)]
    pub osc_amplitude: f64,
    #[serde(default)]
    pub osc_speed: f64,
    #[serde(default)]
    pub phase: f64,
}

impl WaypointSpec {
    pub fn to_waypoint(&self) -> Result<Waypoint> {
        let [w, x, y, z] = self.quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-9 {
            return Err(Error::Config(format!("degenerate quaternion {:?}", self.quat_wxyz)));
        }
        Ok(
            Waypoint::fixed(Vec3::from(self.position), UnitQuaternion::new_normalize(q))
                .with_oscillation(self.osc_amplitude, self.osc_speed, self.phase),
        )
    }
}

/// The `[track]` configuration section: either a bundled fixture name or an
/// explicit waypoint list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSpec {
    pub name: Option<String>,
    pub fixture: Option<String>,
    pub pass_threshold: Option<f64>,
    pub bbox: Option<[f64; 3]>,
    pub start: Option<[f64; 3]>,
    pub waypoints: Vec<WaypointSpec>,
}

pub const FIXTURES: &[&str] = &["powerloop", "barrelroll", "splits", "splits-single"];

/// Loads one of the bundled tracks by id.
pub fn fixture(name: &str) -> Result<Track> {
    let src = match name {
        "powerloop" => include_str!("../fixtures/powerloop.toml"),
        "barrelroll" => include_str!("../fixtures/barrelroll.toml"),
        "splits" => include_str!("../fixtures/splits.toml"),
        "splits-single" => include_str!("../fixtures/splits-single.toml"),
        other => return Err(Error::UnknownTrack(other.to_string())),
    };
    let spec: TrackSpec =
        toml::from_str(src).map_err(|e| Error::parse(format!("fixture {name}"), e))?;
    let mut track = Track::from_spec(&spec)?;
    track.name = name.to_string();
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn osc(amplitude: f64, speed: f64) -> Waypoint {
        Waypoint::fixed(Vec3::new(1.0, 2.0, 3.0), Quat::identity()).with_oscillation(
            amplitude, speed, 0.0,
        )
    }

    #[test]
    fn static_gate_never_moves() {
        let w = osc(0.0, 1.0);
        for k in 0..100 {
            assert_eq!(w.pose_at(k as f64 * 0.37), w.static_pose());
        }
    }

    #[test]
    fn triangle_wave_turning_points() {
        let w = osc(1.5, 1.0);
        assert_relative_eq!(w.displacement_at(1.5), 1.5, epsilon = 1e-12);
        assert_relative_eq!(w.displacement_at(4.5), -1.5, epsilon = 1e-12);
        assert_relative_eq!(w.displacement_at(3.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.pose_at(1.5).position, Vec3::new(1.0, 3.5, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn triangle_wave_enumerated() {
        // Walk the wave at constant speed with explicit reversals.
        let w = osc(1.5, 1.0);
        let dt = 0.001;
        let (mut d, mut dir) = (0.0f64, 1.0f64);
        for k in 1..=12_000 {
            d += dir * dt;
            if d >= 1.5 - 1e-12 {
                d = 3.0 - d;
                dir = -1.0;
            } else if d <= -1.5 + 1e-12 {
                d = -3.0 - d;
                dir = 1.0;
            }
            assert!((w.displacement_at(k as f64 * dt) - d).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn oscillation_periodic_and_continuous() {
        let w = osc(1.2, 0.7).with_oscillation(1.2, 0.7, 1.1);
        let period = w.period().unwrap();
        assert_relative_eq!(period, 4.0 * 1.2 / 0.7);
        let dt = 0.01;
        for k in 0..2000 {
            let t = k as f64 * dt;
            assert!((w.displacement_at(t) - w.displacement_at(t + period)).abs() < 1e-9);
            assert!((w.displacement_at(t + dt) - w.displacement_at(t)).abs() <= 0.7 * dt + 1e-12);
        }
    }

    #[test]
    fn to_local_examples() {
        let pose = Pose {
            position: Vec3::new(1.0, 1.0, 1.0),
            orientation: Quat::identity(),
        };
        assert_eq!(to_local(&Vec3::new(1.0, 1.0, 1.0), &pose), Vec3::zeros());
        assert_relative_eq!(to_local(&Vec3::new(2.0, 3.0, 4.0), &pose), Vec3::new(1.0, 2.0, 3.0));

        let rot = Quat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let pose = Pose {
            position: Vec3::zeros(),
            orientation: rot,
        };
        let oracle = rot.to_rotation_matrix().matrix().transpose() * Vec3::x();
        let local = to_local(&Vec3::x(), &pose);
        assert_relative_eq!(local, oracle, epsilon = 1e-12);
        assert_relative_eq!(local, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn local_world_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pose = Pose {
                position: Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0,
                orientation: Quat::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-3.0..3.0),
                ),
            };
            let p = Vec3::new(rng.random(), rng.random(), rng.random()) * 20.0;
            assert!((to_world(&to_local(&p, &pose), &pose) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn completion_examples() {
        let l = 0.5;
        assert!(check_completion(&Vec3::new(-0.1, 0.0, 0.0), &Vec3::new(0.1, 0.0, 0.0), l));
        assert!(!check_completion(&Vec3::new(0.1, 0.0, 0.0), &Vec3::new(0.2, 0.0, 0.0), l));
        assert!(!check_completion(&Vec3::new(0.1, 0.0, 0.0), &Vec3::new(-0.1, 0.0, 0.0), l));
        assert!(!check_completion(&Vec3::new(-0.1, 0.0, 0.0), &Vec3::new(0.1, 0.6, 0.0), l));
        assert!(check_completion(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(0.1, 0.5, -0.5), l));
    }

    #[test]
    fn completion_fires_once_per_crossing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let start = Vec3::new(-3.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let vel = Vec3::new(rng.random_range(0.5..5.0), 0.0, 0.0);
            let mut prev = start;
            let mut hits = 0;
            for k in 1..1000 {
                let cur = start + vel * (k as f64 * 0.01);
                hits += check_completion(&prev, &cur, 0.5) as usize;
                prev = cur;
            }
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn completion_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let gate = Pose {
                position: Vec3::new(rng.random(), rng.random(), rng.random()),
                orientation: Quat::from_euler_angles(rng.random(), rng.random(), rng.random()),
            };
            let a = gate.position + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = gate.position + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let base = check_completion(&to_local(&a, &gate), &to_local(&b, &gate), 0.5);

            let rot = Quat::from_euler_angles(rng.random(), rng.random(), rng.random());
            let shift = Vec3::new(rng.random(), rng.random(), rng.random()) * 5.0;
            let moved = Pose {
                position: rot * gate.position + shift,
                orientation: rot * gate.orientation,
            };
            let la = to_local(&(rot * a + shift), &moved);
            let lb = to_local(&(rot * b + shift), &moved);
            // Skip cases that sit on a predicate boundary to rounding precision.
            let margin = [la.x, lb.x, lb.y.abs() - 0.5, lb.z.abs() - 0.5]
                .iter()
                .fold(f64::INFINITY, |m, x| m.min(x.abs()));
            if margin > 1e-9 {
                assert_eq!(base, check_completion(&la, &lb, 0.5));
            }
        }
    }

    #[test]
    fn bounds_examples() {
        let h = Vec3::new(8.0, 8.0, 2.0);
        assert!(!out_of_bounds(&Vec3::zeros(), &h));
        assert!(out_of_bounds(&Vec3::new(0.0, 0.0, 2.0 + 1e-9), &h));
        assert!(!out_of_bounds(&Vec3::new(-8.0, 8.0, -2.0), &h));
    }

    #[test]
    fn bounds_match_componentwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Vec3::new(3.0, 5.0, 1.0);
        for _ in 0..10_000 {
            let p = Vec3::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
            );
            let oracle = p.x < -3.0 || p.x > 3.0 || p.y < -5.0 || p.y > 5.0 || p.z < -1.0 || p.z > 1.0;
            assert_eq!(out_of_bounds(&p, &h), oracle);
        }
    }

    #[test]
    fn fixtures_load_and_are_right_handed() {
        for name in FIXTURES {
            let t = fixture(name).unwrap();
            assert!(!t.is_empty());
            for w in &t.waypoints {
                let m: Matrix3<f64> = *w.orientation.to_rotation_matrix().matrix();
                assert!((m.determinant() - 1.0).abs() < 1e-9);
                assert!(w.osc_amplitude >= 0.0);
            }
        }
        assert_eq!(fixture("splits-single").unwrap().len(), 1);
        assert!(matches!(fixture("nope"), Err(Error::UnknownTrack(_))));
    }

    #[test]
    fn spec_validation() {
        let spec = TrackSpec {
            waypoints: vec![],
            ..Default::default()
        };
        assert!(Track::from_spec(&spec).is_err());
        let spec = TrackSpec {
            pass_threshold: Some(-1.0),
            waypoints: vec![WaypointSpec {
                position: [0.0; 3],
                quat_wxyz: [1.0, 0.0, 0.0, 0.0],
                osc_amplitude: 0.0,
                osc_speed: 0.0,
                phase: 0.0,
            }],
            ..Default::default()
        };
        assert!(Track::from_spec(&spec).is_err());
    }
}
