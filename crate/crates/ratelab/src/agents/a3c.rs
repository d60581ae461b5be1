//! Advantage actor-critic with n-step returns, entropy-regularized
//! policy/value loss, and asynchronous workers applying gradients to a
//! shared global network.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::replay::Transition;
use super::Environment;
use crate::nn::{entropy, softmax, ActorCriticNet, AdamState, Gradients};

#[derive(Debug, Error, PartialEq)]
pub enum A3cError {
    #[error("global parameter store is poisoned (a worker panicked)")]
    StorePoisoned,
    #[error("global parameters became non-finite after an update")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A3cConfig {
    pub lr: f64,
    pub workers: usize,
    /// Rollout length before each asynchronous update.
    pub n_step: usize,
    /// Critic loss weight (β_V).
    pub value_loss_weight: f64,
    /// Entropy bonus weight (β_H).
    pub entropy_weight: f64,
    pub gamma: f64,
    pub grad_clip: f64,
    /// Shared-trunk hidden widths feeding the actor/critic heads.
    pub trunk_hidden: Vec<usize>,
}

impl Default for A3cConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            workers: 16,
            n_step: 20,
            value_loss_weight: 0.5,
            entropy_weight: 0.01,
            gamma: 0.99,
            grad_clip: 10.0,
            trunk_hidden: vec![128, 256],
        }
    }
}

impl A3cConfig {
    /// Trunk widths (input plus hidden) for the given state width.
    pub fn trunk_sizes(&self, state_dim: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(&self.trunk_hidden);
        sizes
    }
}

/// n-step advantage: `Σ γ^i·r_i + γ^k·bootstrap − V(s)`, where `k` is
/// the number of collected rewards and the bootstrap is zero when the
/// rollout ended in a terminal state.
pub fn n_step_advantage(rewards: &[f64], bootstrap_value: f64, state_value: f64, gamma: f64) -> f64 {
    let mut ret = bootstrap_value;
    for r in rewards.iter().rev() {
        ret = r + gamma * ret;
    }
    ret - state_value
}

/// Sample an action from the current policy distribution.
pub fn sample_policy(net: &ActorCriticNet, state: &[f64], rng: &mut impl Rng) -> usize {
    let (logits, _) = net.forward(state);
    let probs = softmax(&logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Greedy (most probable) action of the policy head.
pub fn policy_mode(net: &ActorCriticNet, state: &[f64]) -> usize {
    let (logits, _) = net.forward(state);
    super::dqn::argmax(&logits)
}

/// Entropy-regularized actor-critic loss over one rollout, with
/// per-parameter gradients. Advantages are constants with respect to
/// the gradient (no backprop through the return targets); the value
/// target of step t is its n-step return.
pub fn a3c_loss(
    net: &ActorCriticNet,
    rollout: &[Transition],
    cfg: &A3cConfig,
) -> (f64, Gradients) {
    assert!(!rollout.is_empty(), "empty rollout");
    assert!(rollout.len() <= cfg.n_step, "rollout longer than n_step");

    let last = rollout.last().unwrap();
    let bootstrap = if last.done { 0.0 } else { net.forward(&last.next_state).1 };

    // n-step return target for every step, computed backward
    let mut returns = vec![0.0; rollout.len()];
    let mut acc = bootstrap;
    for (i, t) in rollout.iter().enumerate().rev() {
        acc = t.reward + cfg.gamma * acc;
        returns[i] = acc;
    }

    let mut total_loss = 0.0;
    let mut grads = Gradients::zeros(&net.param_shapes());
    for (t, ret) in rollout.iter().zip(&returns) {
        let (logits, value, cache) = net.forward_cached(&t.state);
        let probs = softmax(&logits);
        let adv = ret - value; // stop-gradient
        let h = entropy(&probs);
        let log_p_action = probs[t.action].max(1e-300).ln();

        total_loss += -log_p_action * adv
            + cfg.value_loss_weight * (value - ret).powi(2)
            - cfg.entropy_weight * h;

        // d(-log π(a)·A)/dz_k = A·(π_k − 1[k=a])
        // d(-β_H·H)/dz_k      = β_H·π_k·(ln π_k + H)
        let mut d_logits = vec![0.0; probs.len()];
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == t.action { 1.0 } else { 0.0 };
            let ln_p = p.max(1e-300).ln();
            d_logits[k] = adv * (p - indicator) + cfg.entropy_weight * p * (ln_p + h);
        }
        let d_value = 2.0 * cfg.value_loss_weight * (value - ret);
        grads.add_assign(&net.backward(&cache, &d_logits, d_value));
    }
    (total_loss, grads)
}

/// The shared global actor-critic: one writer at a time applies a full
/// optimizer step; readers copy parameters out.
pub struct GlobalAc {
    inner: Mutex<GlobalAcInner>,
}

struct GlobalAcInner {
    net: ActorCriticNet,
    adam: AdamState,
    updates: u64,
}

impl GlobalAc {
    pub fn new(net: ActorCriticNet) -> Self {
        let adam = AdamState::new(&net.param_shapes());
        GlobalAc { inner: Mutex::new(GlobalAcInner { net, adam, updates: 0 }) }
    }

    pub fn snapshot(&self) -> Result<ActorCriticNet, A3cError> {
        let inner = self.inner.lock().map_err(|_| A3cError::StorePoisoned)?;
        Ok(inner.net.clone())
    }

    /// Clip and apply one gradient step; returns the running update
    /// count. Non-finite gradients are dropped (count unchanged).
    pub fn apply(&self, grads: &Gradients, cfg: &A3cConfig) -> Result<u64, A3cError> {
        let mut inner = self.inner.lock().map_err(|_| A3cError::StorePoisoned)?;
        if !grads.is_finite() {
            return Ok(inner.updates);
        }
        let mut clipped = grads.clone();
        clipped.clip_global_norm(cfg.grad_clip);
        let GlobalAcInner { net, adam, updates } = &mut *inner;
        adam.apply(&mut net.param_slices_mut(), &clipped.slices(), cfg.lr);
        if !net.params_finite() {
            return Err(A3cError::NonFinite);
        }
        *updates += 1;
        Ok(*updates)
    }

    pub fn updates(&self) -> Result<u64, A3cError> {
        Ok(self.inner.lock().map_err(|_| A3cError::StorePoisoned)?.updates)
    }

    /// Replace the stored parameters (used when loading checkpoints).
    pub fn load(&self, net: &ActorCriticNet) -> Result<(), A3cError> {
        let mut inner = self.inner.lock().map_err(|_| A3cError::StorePoisoned)?;
        inner.net.copy_params_from(net);
        Ok(())
    }
}

/// One asynchronous worker: copy the global parameters, act in the
/// private environment replica for up to `n_step` steps (or episode
/// end), push the clipped gradient step back, repeat. Staleness
/// between copy and apply is tolerated; there is no lock across the
/// rollout. Returns the number of updates this worker applied.
pub fn a3c_worker_run<E: Environment>(
    worker_id: usize,
    global: &GlobalAc,
    env: &mut E,
    cfg: &A3cConfig,
    stop: &AtomicBool,
    max_global_updates: u64,
    seed: u64,
) -> Result<u64, A3cError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut local = global.snapshot()?;
    let mut applied = 0u64;
    let _ = worker_id;
    loop {
        if stop.load(Ordering::Relaxed) || global.updates()? >= max_global_updates {
            return Ok(applied);
        }
        let mut rollout = Vec::with_capacity(cfg.n_step);
        for _ in 0..cfg.n_step {
            let state = env.observe();
            let action = sample_policy(&local, &state, &mut rng);
            let (reward, done) = env.step(action);
            let next_state = env.observe();
            rollout.push(Transition { state, action, reward, next_state, done });
            if done {
                env.reset();
                break;
            }
        }
        let (_, grads) = a3c_loss(&local, &rollout, cfg);
        global.apply(&grads, cfg)?;
        applied += 1;
        local = global.snapshot()?;
    }
}
