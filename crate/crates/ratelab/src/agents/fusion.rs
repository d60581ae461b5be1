//! Decision fusion between the DQN and A3C candidates: a linear
//! weight schedule and a probabilistic choice, plus an experimental
//! score-blending variant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::softmax;

/// How the two candidate actions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Execute the DQN candidate with probability α, else the A3C one.
    #[default]
    Probabilistic,
    /// Blend normalized Q-scores with policy probabilities and take
    /// the argmax (experimental alternative reading).
    Blend,
}

/// Linear ramp of the DQN weight over the training horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Steps over which the ramp runs; 0 means "already at the end".
    pub total_steps: u64,
    pub mode: FusionMode,
}

impl Default for FusionSchedule {
    fn default() -> Self {
        Self { alpha_start: 0.3, alpha_end: 0.7, total_steps: 0, mode: FusionMode::Probabilistic }
    }
}

impl FusionSchedule {
    pub fn validate(&self) -> bool {
        (0.0..=1.0).contains(&self.alpha_start)
            && (0.0..=1.0).contains(&self.alpha_end)
            && self.alpha_start <= self.alpha_end
    }
}

/// Fusion weight at step `t`: linear from start to end over the
/// schedule, clamped afterwards.
pub fn alpha(t: u64, sched: &FusionSchedule) -> f64 {
    let frac = if sched.total_steps == 0 {
        1.0
    } else {
        (t as f64 / sched.total_steps as f64).min(1.0)
    };
    sched.alpha_start + frac * (sched.alpha_end - sched.alpha_start)
}

/// Probabilistic choice: DQN candidate with probability `alpha`.
pub fn fuse(dqn_action: usize, a3c_action: usize, alpha: f64, rng: &mut impl Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&alpha));
    if rng.random::<f64>() < alpha {
        dqn_action
    } else {
        a3c_action
    }
}

/// Experimental blending: `α·softmax(Q) + (1−α)·π`, argmax.
pub fn fuse_blend(q_values: &[f64], policy_probs: &[f64], alpha: f64) -> usize {
    assert_eq!(q_values.len(), policy_probs.len());
    let q_norm = softmax(q_values);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..q_norm.len() {
        let score = alpha * q_norm[i] + (1.0 - alpha) * policy_probs[i];
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}
