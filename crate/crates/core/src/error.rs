use std::path::PathBuf;

use crate::dynamics::QuadState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("simulation diverged at t = {time:.4} s: {state:?}")]
    Divergence { time: f64, state: Box<QuadState> },

    #[error("latency window ({lo:.4}, {hi:.4}] contains no commands")]
    EmptyLatencyWindow { lo: f64, hi: f64 },

    #[error("latency buffer timestamps must increase: {last} then {next}")]
    NonMonotonicTimestamp { last: f64, next: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reset state is outside the bounding box of waypoint {waypoint}")]
    ResetOutOfBounds { waypoint: usize },

    #[error("environment episode is finished; call reset first")]
    EpisodeDone,

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingDiverged { iteration: usize, reason: String },

    #[error("unknown track fixture `{0}`")]
    UnknownTrack(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Checkpoint,
    Simulation,
    Training,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Checkpoint => 4,
            Category::Simulation => 5,
            Category::Training => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Io => "io",
            Category::Checkpoint => "checkpoint",
            Category::Simulation => "simulation",
            Category::Training => "training",
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::UnknownTrack(_) | Error::Parse { .. } => Category::Config,
            Error::Io { .. } => Category::Io,
            Error::Checkpoint(_) => Category::Checkpoint,
            Error::NonFinite(_)
            | Error::Divergence { .. }
            | Error::EmptyLatencyWindow { .. }
            | Error::NonMonotonicTimestamp { .. }
            | Error::ResetOutOfBounds { .. }
            | Error::EpisodeDone => Category::Simulation,
            Error::NonFiniteActivation { .. } | Error::TrainingDiverged { .. } => Category::Training,
        }
    }
}
