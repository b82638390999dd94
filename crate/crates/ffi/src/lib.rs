//! C ABI over the aerobat simulator and trained policies.
//!
//! Every function returns an [`AerobatStatus`]. On failure the message is
//! kept per thread and read back with [`aerobat_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use aerobat::env::{Env, Termination, ACT_DIM, OBS_DIM};
use aerobat::learner::{Checkpoint, Policy};
use aerobat::track::TrackSpec;
use aerobat::{Config, Error};

pub const AEROBAT_OBS_DIM: usize = 28;
pub const AEROBAT_ACT_DIM: usize = 4;

const _: () = assert!(AEROBAT_OBS_DIM == OBS_DIM && AEROBAT_ACT_DIM == ACT_DIM);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AerobatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    Simulation = 6,
    Training = 7,
    EpisodeDone = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AerobatTermination {
    None = 0,
    StepCap = 1,
    OutOfBounds = 2,
    TrackComplete = 3,
}

/// Outcome of one policy-rate step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AerobatStepResult {
    pub reward: f64,
    pub done: bool,
    pub termination: AerobatTermination,
    /// Index of the gate the vehicle is currently flying towards.
    pub cursor: usize,
    pub gate_passed: bool,
    pub clamped: bool,
}

/// Opaque simulator instance.
pub struct AerobatEnv {
    env: Env,
}

/// Opaque deterministic actor loaded from a checkpoint.
pub struct AerobatPolicy {
    policy: Policy,
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn status(&self) -> AerobatStatus {
        use aerobat::error::Category;
        match self {
            Failure::Null(_) => AerobatStatus::NullPointer,
            Failure::Invalid(_) => AerobatStatus::InvalidArgument,
            Failure::Core(Error::EpisodeDone) => AerobatStatus::EpisodeDone,
            Failure::Core(e) => match e.category() {
                Category::Config => AerobatStatus::Config,
                Category::Io => AerobatStatus::Io,
                Category::Checkpoint => AerobatStatus::Checkpoint,
                Category::Simulation => AerobatStatus::Simulation,
                Category::Training => AerobatStatus::Training,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Null(arg) => format!("null pointer passed as `{arg}`"),
            Failure::Invalid(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AerobatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AerobatStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(fail.message());
            fail.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AerobatStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, name: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::Invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, want: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    if len != want {
        return Err(Failure::Invalid(format!("`{name}` has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, want: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    if len != want {
        return Err(Failure::Invalid(format!("`{name}` has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aerobat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL after a
/// successful call. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn aerobat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a simulator. `config_path` may be NULL for built-in defaults;
/// `track_id` (may be NULL) overrides the configured track with a bundled
/// fixture.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_new(
    config_path: *const c_char,
    track_id: *const c_char,
    seed: u64,
    out: *mut *mut AerobatEnv,
) -> AerobatStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let mut cfg = match opt_str(config_path, "config_path")? {
            Some(p) => Config::load(PathBuf::from(p))?,
            None => Config::default(),
        };
        if let Some(id) = opt_str(track_id, "track_id")? {
            cfg.track = TrackSpec {
                fixture: Some(id.to_string()),
                ..TrackSpec::default()
            };
        }
        cfg.validate()?;
        let track = Arc::new(cfg.build_track()?);
        let env = Env::new(track, &cfg, seed)?;
        *out = Box::into_raw(Box::new(AerobatEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must be NULL or a handle from [`aerobat_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_free(env: *mut AerobatEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Samples a start state and writes the first observation.
///
/// # Safety
/// `env` must be a live handle; `obs_out` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_reset(env: *mut AerobatEnv, obs_out: *mut f64, obs_len: usize) -> AerobatStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let out = slice_out(obs_out, obs_len, AEROBAT_OBS_DIM, "obs_out")?;
        let obs = env.env.reset_from_start()?;
        out.copy_from_slice(obs.as_slice());
        Ok(())
    })
}

/// Advances one policy step with a normalized action in [-1, 1]^4.
///
/// # Safety
/// `env` must be a live handle, `action` must hold `act_len` doubles,
/// `obs_out` must hold `obs_len` doubles and `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_step(
    env: *mut AerobatEnv,
    action: *const f64,
    act_len: usize,
    obs_out: *mut f64,
    obs_len: usize,
    result: *mut AerobatStepResult,
) -> AerobatStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let a = slice_in(action, act_len, AEROBAT_ACT_DIM, "action")?;
        let out = slice_out(obs_out, obs_len, AEROBAT_OBS_DIM, "obs_out")?;
        let result = handle(result, "result")?;
        let step = env.env.step(&[a[0], a[1], a[2], a[3]])?;
        out.copy_from_slice(step.obs.as_slice());
        *result = AerobatStepResult {
            reward: step.reward.total,
            done: step.done,
            termination: match step.info.termination {
                None => AerobatTermination::None,
                Some(Termination::StepCap) => AerobatTermination::StepCap,
                Some(Termination::OutOfBounds) => AerobatTermination::OutOfBounds,
                Some(Termination::TrackComplete) => AerobatTermination::TrackComplete,
            },
            cursor: step.info.cursor,
            gate_passed: step.info.passed.is_some(),
            clamped: step.info.clamped,
        };
        Ok(())
    })
}

/// Fixes the gate oscillation speed for subsequent resets. A negative or
/// NaN speed restores per-episode sampling from the configured range.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_set_gate_speed(env: *mut AerobatEnv, speed: f64) -> AerobatStatus {
    guard(|| {
        let env = handle(env, "env")?;
        if speed.is_infinite() {
            return Err(Failure::Invalid("gate speed must be finite".into()));
        }
        env.env.set_gate_speed((speed >= 0.0).then_some(speed));
        Ok(())
    })
}

/// Writes the vehicle state as 13 doubles: position, quaternion (w, x, y, z),
/// world velocity, body rates.
///
/// # Safety
/// `env` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aerobat_env_state(env: *mut AerobatEnv, out: *mut f64, len: usize) -> AerobatStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let out = slice_out(out, len, 13, "out")?;
        let s = env.env.state();
        let q = s.orientation.quaternion();
        out[..3].copy_from_slice(s.position.as_slice());
        out[3..7].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        out[7..10].copy_from_slice(s.velocity.as_slice());
        out[10..].copy_from_slice(s.body_rates.as_slice());
        Ok(())
    })
}

/// Loads the actor from a training checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aerobat_policy_load(path: *const c_char, out: *mut *mut AerobatPolicy) -> AerobatStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let path = opt_str(path, "path")?.ok_or(Failure::Null("path"))?;
        let ck = Checkpoint::load(PathBuf::from(path))?;
        if ck.policy.obs_dim() != AEROBAT_OBS_DIM || ck.policy.act_dim() != AEROBAT_ACT_DIM {
            return Err(Failure::Invalid("checkpoint policy has unexpected dimensions".into()));
        }
        *out = Box::into_raw(Box::new(AerobatPolicy { policy: ck.policy }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be NULL or a handle from [`aerobat_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aerobat_policy_free(policy: *mut AerobatPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Deterministic (mean) action for one observation.
///
/// # Safety
/// `policy` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn aerobat_policy_act(
    policy: *const AerobatPolicy,
    obs: *const f64,
    obs_len: usize,
    action_out: *mut f64,
    act_len: usize,
) -> AerobatStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or(Failure::Null("policy"))?;
        let obs = slice_in(obs, obs_len, AEROBAT_OBS_DIM, "obs")?;
        let out = slice_out(action_out, act_len, AEROBAT_ACT_DIM, "action_out")?;
        let (mean, _) = policy.policy.forward_actor(obs)?;
        out.copy_from_slice(&mean);
        Ok(())
    })
}
