//! Experiment orchestration: configuration, the training loop,
//! frozen-policy evaluation, cross-pattern comparison, ablations, and
//! the baseline tuning sweep.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod trainer;

pub use config::{load_config, AblationFlags, ConfigError, ExperimentConfig};
pub use eval::{
    ablate, compare, evaluate, tune_baselines, CompareOutput, HybridPolicy, PolicyKind,
};
pub use metrics::{percentile, EvalConstraints, EvalReport};
pub use trainer::{
    min_interval_guard, train, train_agents, ConvergenceLog, RateLimitEnv, TrainArtifacts,
    TrainError,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] crate::sim::EnvError),
    #[error(transparent)]
    State(#[from] crate::state::StateError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::checkpoint::CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
