//! Quadrotor aerobatics: flight simulation, gate tracks, reward shaping, a
//! reverse curriculum over reset states, and a PPO learner.

pub mod config;
pub mod curriculum;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod learner;
pub mod nn;
pub mod reward;
pub mod track;

pub use config::Config;
pub use error::{Error, Result};
