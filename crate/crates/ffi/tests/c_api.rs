use std::ffi::{CStr, CString};
use std::ptr;

use aerobat::learner::{Checkpoint, Mode, NetworkConfig, Trainer};
use aerobat::Config;
use aerobat_ffi::*;

fn last_error() -> String {
    let p = aerobat_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_env(track: &str, seed: u64) -> *mut AerobatEnv {
    let id = CString::new(track).unwrap();
    let mut env = ptr::null_mut();
    let st = unsafe { aerobat_env_new(ptr::null(), id.as_ptr(), seed, &mut env) };
    assert_eq!(st, AerobatStatus::Ok);
    assert!(!env.is_null());
    env
}

fn rollout(seed: u64) -> Vec<f64> {
    let env = new_env("splits-single", seed);
    let mut obs = [0.0; AEROBAT_OBS_DIM];
    let mut trace = Vec::new();
    unsafe {
        assert_eq!(aerobat_env_reset(env, obs.as_mut_ptr(), obs.len()), AerobatStatus::Ok);
        let action = [0.0, 0.1, 0.0, 0.0];
        let mut res = AerobatStepResult {
            reward: 0.0,
            done: false,
            termination: AerobatTermination::None,
            cursor: 0,
            gate_passed: false,
            clamped: false,
        };
        for _ in 0..50 {
            let st = aerobat_env_step(env, action.as_ptr(), 4, obs.as_mut_ptr(), obs.len(), &mut res);
            assert_eq!(st, AerobatStatus::Ok);
            trace.push(res.reward);
            trace.extend_from_slice(&obs);
            if res.done {
                assert_ne!(res.termination, AerobatTermination::None);
                break;
            }
        }
        aerobat_env_free(env);
    }
    trace
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(aerobat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn env_roundtrip_is_deterministic() {
    let a = rollout(11);
    assert!(a.iter().all(|x| x.is_finite()));
    assert_eq!(a, rollout(11));
    assert_ne!(a, rollout(12));
}

#[test]
fn errors_are_reported() {
    let mut env = ptr::null_mut();
    let bad = CString::new("no-such-track").unwrap();
    let st = unsafe { aerobat_env_new(ptr::null(), bad.as_ptr(), 0, &mut env) };
    assert_eq!(st, AerobatStatus::Config);
    assert!(env.is_null());
    assert!(last_error().contains("no-such-track"));

    let st = unsafe { aerobat_env_new(ptr::null(), ptr::null(), 0, ptr::null_mut()) };
    assert_eq!(st, AerobatStatus::NullPointer);

    let missing = CString::new("/nonexistent/aerobat.toml").unwrap();
    let st = unsafe { aerobat_env_new(missing.as_ptr(), ptr::null(), 0, &mut env) };
    assert_eq!(st, AerobatStatus::Io);

    let env = new_env("powerloop", 3);
    let mut obs = [0.0; AEROBAT_OBS_DIM];
    unsafe {
        assert_eq!(aerobat_env_reset(env, obs.as_mut_ptr(), 5), AerobatStatus::InvalidArgument);
        assert!(last_error().contains("expected 28"));
        assert_eq!(aerobat_env_reset(env, obs.as_mut_ptr(), obs.len()), AerobatStatus::Ok);
        assert!(aerobat_last_error().is_null());
        assert_eq!(aerobat_env_set_gate_speed(env, f64::INFINITY), AerobatStatus::InvalidArgument);
        assert_eq!(aerobat_env_set_gate_speed(env, 0.5), AerobatStatus::Ok);
        let mut state = [0.0; 13];
        assert_eq!(aerobat_env_state(env, state.as_mut_ptr(), 13), AerobatStatus::Ok);
        let qn: f64 = state[3..7].iter().map(|x| x * x).sum();
        assert!((qn - 1.0).abs() < 1e-9);
        aerobat_env_free(env);
        aerobat_env_free(ptr::null_mut());
    }
}

#[test]
fn stepping_a_finished_episode_fails() {
    let env = new_env("splits-single", 5);
    let mut obs = [0.0; AEROBAT_OBS_DIM];
    let mut res = std::mem::MaybeUninit::<AerobatStepResult>::uninit();
    // full thrust straight up leaves the bounding box quickly
    let action = [1.0, 0.0, 0.0, 0.0];
    unsafe {
        aerobat_env_reset(env, obs.as_mut_ptr(), obs.len());
        let mut done = false;
        for _ in 0..2000 {
            let st = aerobat_env_step(env, action.as_ptr(), 4, obs.as_mut_ptr(), obs.len(), res.as_mut_ptr());
            assert_eq!(st, AerobatStatus::Ok);
            if res.assume_init().done {
                done = true;
                break;
            }
        }
        assert!(done);
        let st = aerobat_env_step(env, action.as_ptr(), 4, obs.as_mut_ptr(), obs.len(), res.as_mut_ptr());
        assert_eq!(st, AerobatStatus::EpisodeDone);
        aerobat_env_free(env);
    }
}

#[test]
fn policy_loads_from_checkpoint() {
    let mut cfg = Config::default();
    cfg.ppo.network = NetworkConfig {
        encoder: 8,
        hidden: vec![8],
        ..Default::default()
    };
    let trainer = Trainer::new(cfg, Mode::Sp, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    Checkpoint::capture(&trainer).save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    let env = new_env("splits-single", 1);
    let mut obs = [0.0; AEROBAT_OBS_DIM];
    let mut act = [9.0; AEROBAT_ACT_DIM];
    unsafe {
        assert_eq!(aerobat_policy_load(cpath.as_ptr(), &mut policy), AerobatStatus::Ok);
        aerobat_env_reset(env, obs.as_mut_ptr(), obs.len());
        let st = aerobat_policy_act(policy, obs.as_ptr(), obs.len(), act.as_mut_ptr(), act.len());
        assert_eq!(st, AerobatStatus::Ok);
        let (mean, _) = trainer.policy.forward_actor(&obs).unwrap();
        assert_eq!(act.to_vec(), mean);
        assert!(act.iter().all(|a| a.abs() <= 1.0));

        obs[0] = f64::NAN;
        let st = aerobat_policy_act(policy, obs.as_ptr(), obs.len(), act.as_mut_ptr(), act.len());
        assert_eq!(st, AerobatStatus::Simulation);
        aerobat_policy_free(policy);
        aerobat_env_free(env);

        std::fs::write(&path, b"garbage").unwrap();
        assert_eq!(aerobat_policy_load(cpath.as_ptr(), &mut policy), AerobatStatus::Checkpoint);
        assert!(policy.is_null());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/aerobat.h");
    for name in [
        "aerobat_version",
        "aerobat_last_error",
        "aerobat_env_new",
        "aerobat_env_free",
        "aerobat_env_reset",
        "aerobat_env_step",
        "aerobat_env_set_gate_speed",
        "aerobat_env_state",
        "aerobat_policy_load",
        "aerobat_policy_free",
        "aerobat_policy_act",
        "typedef struct AerobatEnv AerobatEnv",
        "AEROBAT_STATUS_EPISODE_DONE = 8",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
