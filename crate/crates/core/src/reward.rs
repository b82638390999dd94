//! Composite per-step reward: sparse gate-pass score plus smoothness and
//! heading terms, with an optional progress-shaping term for the
//! reward-shaping baseline.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Quat, Vec3};
use crate::track::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Original sparse reward.
    #[default]
    Sp,
    /// Sparse reward plus dense progress shaping.
    Rs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_aer: f64,
    pub w_act: f64,
    pub w_act_change: f64,
    /// The yaw term is already non-positive, so its weight is kept
    /// non-negative for misalignment to cost reward.
    pub w_yaw: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub w_sp: f64,
    pub w_sq: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_aer: 1.0,
            w_act: -0.0005,
            w_act_change: -0.01,
            w_yaw: 0.02,
            a: 2.0,
            b: 1.0,
            c: 5.0,
            w_sp: 1.0,
            w_sq: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.w_aer > 0.0
            && self.w_act <= 0.0
            && self.w_act_change <= 0.0
            && self.w_yaw >= 0.0
            && self.a > self.b
            && self.b > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(
                "reward weights need w_aer > 0, w_act and w_act_change <= 0, w_yaw >= 0 and a > b > 0".into(),
            ))
        }
    }
}

/// `[reward]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RewardConfig {
    pub mode: RewardMode,
    #[serde(flatten)]
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub aer: f64,
    pub act: f64,
    pub act_change: f64,
    pub yaw: f64,
    pub shaping: Option<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    /// The original reward, excluding any shaping term.
    pub fn original(&self, w: &RewardWeights) -> f64 {
        w.w_aer * self.aer + w.w_act * self.act + w.w_act_change * self.act_change + w.w_yaw * self.yaw
    }
}

/// Linear far from the optimum, exponential near it; C¹ at `x = a − b`.
pub fn activation(x: f64, a: f64, b: f64) -> f64 {
    if x > a - b {
        a - x
    } else {
        b - 1.0 + (a - x - b).exp()
    }
}

/// Angle between the body z axes of two attitudes, radians.
pub fn tilt_error(desired: &Quat, actual: &Quat) -> f64 {
    let zd = desired * Vec3::z();
    let za = actual * Vec3::z();
    zd.dot(&za).clamp(-1.0, 1.0).acos()
}

pub fn aerobatic_reward(
    local: &Vec3,
    attitude: &Quat,
    gate: &Pose,
    crossed: bool,
    w: &RewardWeights,
) -> f64 {
    if !crossed {
        return 0.0;
    }
    let p_err = local.norm();
    let theta_err = tilt_error(&gate.orientation, attitude);
    activation(p_err, w.a, w.b) + activation(theta_err, w.a, w.b) + w.c
}

/// `(r_act, r_act_change)`: summed magnitude of commanded body rates and the
/// Euclidean change between consecutive normalized actions.
pub fn smoothness_rewards(rates: &Vec3, action: &[f64; 4], last_action: &[f64; 4]) -> (f64, f64) {
    let act = rates.x.abs() + rates.y.abs() + rates.z.abs();
    let change = action
        .iter()
        .zip(last_action)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    (act, change)
}

const YAW_EPS: f64 = 1e-3;

/// Minus the angle between the horizontal (body x-y) part of the body-frame
/// velocity and the body x axis. Zero when that projection is too short to
/// define a direction.
pub fn yaw_reward(body_velocity: &Vec3) -> f64 {
    let (x, y) = (body_velocity.x, body_velocity.y);
    let n = x.hypot(y);
    if n < YAW_EPS {
        return 0.0;
    }
    -(x / n).clamp(-1.0, 1.0).acos()
}

pub fn shaping_reward(
    p_err_last: f64,
    p_err: f64,
    theta_err_last: f64,
    theta_err: f64,
    w_sp: f64,
    w_sq: f64,
) -> f64 {
    w_sp * (p_err_last - p_err) + w_sq * (theta_err_last - theta_err)
}

/// Sub-reward inputs gathered from one environment step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardTerms {
    pub aer: f64,
    pub act: f64,
    pub act_change: f64,
    pub yaw: f64,
    /// Progress-shaping value; only counted in [`RewardMode::Rs`].
    pub shaping: f64,
}

pub fn total_reward(terms: &RewardTerms, w: &RewardWeights, mode: RewardMode) -> RewardBreakdown {
    let mut total = w.w_aer * terms.aer
        + w.w_act * terms.act
        + w.w_act_change * terms.act_change
        + w.w_yaw * terms.yaw;
    let shaping = match mode {
        RewardMode::Sp => None,
        RewardMode::Rs => {
            total += terms.shaping;
            Some(terms.shaping)
        }
    };
    RewardBreakdown {
        aer: terms.aer,
        act: terms.act,
        act_change: terms.act_change,
        yaw: terms.yaw,
        shaping,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{E, FRAC_PI_2, PI};

    #[test]
    fn activation_examples() {
        assert_eq!(activation(2.0, 2.0, 1.0), 0.0);
        assert_relative_eq!(activation(1.0, 2.0, 1.0), 1.0);
        assert_relative_eq!(1.0 - 1.0 + (2.0f64 - 1.0 - 1.0).exp(), 1.0);
        assert_relative_eq!(activation(0.0, 2.0, 1.0), E, epsilon = 1e-12);
    }

    #[test]
    fn activation_decreasing_and_c1() {
        let (a, b) = (2.0, 1.0);
        let mut prev = activation(0.0, a, b);
        for k in 1..5000 {
            let v = activation(k as f64 * 0.002, a, b);
            assert!(v < prev);
            prev = v;
        }
        let h = 1e-6;
        let x = a - b;
        let left = (activation(x, a, b) - activation(x - h, a, b)) / h;
        let right = (activation(x + h, a, b) - activation(x, a, b)) / h;
        assert!((left + 1.0).abs() < 1e-4 && (right + 1.0).abs() < 1e-4);
    }

    #[test]
    fn aerobatic_reward_examples() {
        let w = RewardWeights::default();
        let gate = Pose {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        };
        assert_eq!(aerobatic_reward(&Vec3::new(0.1, 0.2, 0.0), &Quat::identity(), &gate, false, &w), 0.0);
        let perfect = aerobatic_reward(&Vec3::zeros(), &Quat::identity(), &gate, true, &w);
        assert_relative_eq!(perfect, 2.0 * E + 5.0, epsilon = 1e-12);
        assert_relative_eq!(perfect, 10.43656, epsilon = 1e-5);
    }

    #[test]
    fn inverted_alignment_has_zero_tilt_error() {
        let flip = Quat::from_axis_angle(&Vec3::x_axis(), PI);
        assert!((flip * Vec3::z() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let drone = Quat::from_axis_angle(&Vec3::y_axis(), PI);
        assert!(tilt_error(&flip, &drone) < 1e-7);
    }

    #[test]
    fn tilt_error_ignores_yaw() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let gate = Quat::from_euler_angles(rng.random(), rng.random(), rng.random());
            let drone = Quat::from_euler_angles(rng.random(), rng.random(), rng.random());
            let yawed = drone * Quat::from_axis_angle(&Vec3::z_axis(), rng.random_range(-PI..PI));
            assert!((tilt_error(&gate, &drone) - tilt_error(&gate, &yawed)).abs() < 1e-7);
        }
    }

    #[test]
    fn aerobatic_reward_peaks_at_zero_error() {
        let w = RewardWeights::default();
        let gate = Pose {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        };
        let best = aerobatic_reward(&Vec3::zeros(), &Quat::identity(), &gate, true, &w);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = Vec3::new(rng.random(), rng.random(), rng.random()) * 0.5;
            let q = Quat::from_euler_angles(rng.random(), rng.random(), 0.0);
            assert!(aerobatic_reward(&p, &q, &gate, true, &w) < best);
        }
    }

    #[test]
    fn smoothness_examples() {
        let h = [0.0; 4];
        assert_eq!(smoothness_rewards(&Vec3::zeros(), &h, &h), (0.0, 0.0));
        let u = [0.1, 0.2, -0.4, 0.1];
        let (act, change) = smoothness_rewards(&Vec3::new(1.0, -2.0, 0.5), &u, &u);
        assert_relative_eq!(act, 3.5);
        assert_eq!(change, 0.0);
        let (_, change) = smoothness_rewards(&Vec3::zeros(), &[0.3, 0.4, 0.0, 0.0], &h);
        assert_relative_eq!(change, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn yaw_examples() {
        assert_eq!(yaw_reward(&Vec3::new(3.0, 0.0, 1.0)), 0.0);
        assert_relative_eq!(yaw_reward(&Vec3::new(0.0, 2.0, 0.0)), -FRAC_PI_2);
        assert_relative_eq!(yaw_reward(&Vec3::new(-1.0, 0.0, 0.0)), -PI);
        assert_eq!(yaw_reward(&Vec3::new(0.0, 1e-4, 5.0)), 0.0);
    }

    #[test]
    fn shaping_examples_and_telescoping() {
        assert_eq!(shaping_reward(1.0, 1.0, 0.3, 0.3, 1.0, 0.5), 0.0);
        assert_relative_eq!(shaping_reward(1.0, 0.9, 0.3, 0.3, 1.0, 0.5), 0.1, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..5.0)).collect();
        let th: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..PI)).collect();
        let sum: f64 = (1..50)
            .map(|t| shaping_reward(p[t - 1], p[t], th[t - 1], th[t], 1.0, 0.5))
            .sum();
        let ends = 1.0 * (p[0] - p[49]) + 0.5 * (th[0] - th[49]);
        assert!((sum - ends).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w = RewardWeights {
            w_aer: 1.0,
            w_act: -0.01,
            w_act_change: -0.01,
            w_yaw: -0.1,
            ..Default::default()
        };
        let zero = total_reward(&RewardTerms::default(), &w, RewardMode::Sp);
        assert_eq!(zero.total, 0.0);
        let unit = RewardTerms {
            aer: 1.0,
            act: 1.0,
            act_change: 1.0,
            yaw: 1.0,
            shaping: 0.7,
        };
        let b = total_reward(&unit, &w, RewardMode::Sp);
        assert_relative_eq!(b.total, 0.88, epsilon = 1e-12);
        assert_eq!(b.shaping, None);
        let b = total_reward(&unit, &w, RewardMode::Rs);
        assert_relative_eq!(b.total, 0.88 + 0.7, epsilon = 1e-12);
        assert_relative_eq!(b.original(&w), 0.88, epsilon = 1e-12);
    }

    #[test]
    fn total_matches_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = RewardWeights::default();
        for _ in 0..1000 {
            let t = RewardTerms {
                aer: rng.random_range(0.0..10.0),
                act: rng.random_range(0.0..15.0),
                act_change: rng.random_range(0.0..4.0),
                yaw: -rng.random_range(0.0..PI),
                shaping: rng.random_range(-1.0..1.0),
            };
            for mode in [RewardMode::Sp, RewardMode::Rs] {
                let b = total_reward(&t, &w, mode);
                let mut oracle = 0.0;
                oracle += t.yaw * w.w_yaw;
                oracle += t.act_change * w.w_act_change;
                oracle += t.act * w.w_act;
                oracle += t.aer * w.w_aer;
                if mode == RewardMode::Rs {
                    oracle += t.shaping;
                }
                assert!((b.total - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_validation() {
        assert!(RewardWeights::default().validate().is_ok());
        let bad = RewardWeights {
            a: 1.0,
            b: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_penalties_reduce_reward() {
        let w = RewardWeights::default();
        let sideways = RewardTerms {
            act: 2.0,
            act_change: 0.5,
            yaw: yaw_reward(&Vec3::new(0.0, 2.0, 0.0)),
            ..Default::default()
        };
        let b = total_reward(&sideways, &w, RewardMode::Sp);
        assert!(w.w_yaw * sideways.yaw < 0.0);
        assert!(b.total < 0.0);
    }
}
