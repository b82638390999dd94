//! Actor-critic PPO learner and training loop.

pub mod checkpoint;
pub mod ppo;
pub mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use ppo::{
    compute_gae, gaussian_log_prob, ppo_loss, ppo_update, sample_action, LossCoefs, LossStats, Minibatch,
    NetworkConfig, Policy, PpoConfig, RolloutBatch, SampledAction, UpdateStats,
};
pub use trainer::{derive_seed, read_log, write_log, Mode, TrainLogRow, Trainer};
