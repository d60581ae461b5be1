//! Learning agents: DQN with experience replay and a target network,
//! an asynchronous advantage actor-critic, and the probabilistic
//! decision-fusion mechanism that arbitrates between them.

pub mod a3c;
pub mod bandit;
pub mod dqn;
pub mod fusion;
pub mod replay;

pub use a3c::{a3c_loss, n_step_advantage, A3cConfig, GlobalAc};
pub use dqn::{epsilon, td_target, DqnAgent, DqnConfig};
pub use fusion::{alpha, fuse, FusionSchedule};
pub use replay::{ReplayBuffer, Transition};

/// A discrete-action environment the agents can act in. Implemented by
/// the rate-limiting simulator adapter and by toy test environments.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Current encoded observation.
    fn observe(&self) -> Vec<f64>;
    /// Execute an action; returns (reward, terminal).
    fn step(&mut self, action: usize) -> (f64, bool);
    /// Return to an initial state (fresh randomness allowed).
    fn reset(&mut self);
}
