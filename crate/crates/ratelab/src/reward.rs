//! Multi-objective step reward: throughput ratio, exponential latency
//! penalty past the SLA target, and a threshold-stability penalty,
//! combined with fixed weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("latency decay coefficient must be positive (got {0})")]
    InvalidLatencyDecay(f64),
    #[error("discount must lie in (0, 1) (got {0})")]
    InvalidDiscount(f64),
    #[error("previous threshold must be positive (got {0})")]
    NonPositiveThreshold(f64),
}

/// Weights and shape parameters of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w_throughput: f64,
    pub w_latency: f64,
    pub w_stability: f64,
    /// SLA latency target, milliseconds.
    pub tau_target_ms: f64,
    /// Exponential decay per millisecond past the target.
    pub latency_decay_per_ms: f64,
    /// Discount factor for return computation.
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_throughput: 0.5,
            w_latency: 0.4,
            w_stability: 0.1,
            tau_target_ms: 500.0,
            latency_decay_per_ms: 0.01,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let sum = self.w_throughput + self.w_latency + self.w_stability;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::WeightSum(sum));
        }
        if self.latency_decay_per_ms <= 0.0 {
            return Err(RewardError::InvalidLatencyDecay(self.latency_decay_per_ms));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(RewardError::InvalidDiscount(self.gamma));
        }
        Ok(())
    }
}

/// Fraction of arriving requests served successfully; 0 when nothing
/// arrived.
pub fn throughput_reward(n_success: u64, n_total: u64) -> f64 {
    assert!(n_success <= n_total, "successes {n_success} exceed total {n_total}");
    if n_total == 0 {
        0.0
    } else {
        n_success as f64 / n_total as f64
    }
}

/// 1 at or under the SLA target, exponentially decaying past it.
pub fn latency_reward(latency_ms: f64, cfg: &RewardConfig) -> f64 {
    debug_assert!(latency_ms >= 0.0);
    if latency_ms <= cfg.tau_target_ms {
        1.0
    } else {
        (-cfg.latency_decay_per_ms * (latency_ms - cfg.tau_target_ms)).exp()
    }
}

/// Penalty for relative threshold movement: `−|θ' − θ|/θ`.
pub fn stability_reward(theta_prev: f64, theta_next: f64) -> Result<f64, RewardError> {
    if theta_prev <= 0.0 {
        return Err(RewardError::NonPositiveThreshold(theta_prev));
    }
    Ok(-(theta_next - theta_prev).abs() / theta_prev)
}

/// Weighted combination of the three components.
pub fn total_reward(r_throughput: f64, r_latency: f64, r_stability: f64, cfg: &RewardConfig) -> f64 {
    cfg.w_throughput * r_throughput + cfg.w_latency * r_latency + cfg.w_stability * r_stability
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn throughput_ratio() {
        assert_eq!(throughput_reward(100, 100), 1.0);
        assert_eq!(throughput_reward(0, 100), 0.0);
        assert_eq!(throughput_reward(75, 100), 0.75);
        assert_eq!(throughput_reward(0, 0), 0.0);
    }

    #[test]
    #[should_panic(expected = "exceed total")]
    fn throughput_rejects_inverted_counts() {
        throughput_reward(2, 1);
    }

    #[test]
    fn latency_branches() {
        let cfg = RewardConfig::default();
        assert_eq!(latency_reward(300.0, &cfg), 1.0);
        assert_eq!(latency_reward(500.0, &cfg), 1.0);
        // exp(-alpha * d) = 0.5 at d = ln 2 / alpha
        let half = 500.0 + std::f64::consts::LN_2 / cfg.latency_decay_per_ms;
        assert!((latency_reward(half, &cfg) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability_reward(1000.0, 1000.0).unwrap(), 0.0);
        assert_eq!(stability_reward(1000.0, 1500.0).unwrap(), -0.5);
        assert_eq!(stability_reward(1000.0, 500.0).unwrap(), -0.5);
        assert!(stability_reward(0.0, 1.0).is_err());
    }

    #[test]
    fn total_with_default_weights() {
        let cfg = RewardConfig::default();
        assert!((total_reward(1.0, 1.0, 0.0, &cfg) - 0.9).abs() < 1e-12);
        assert_eq!(total_reward(0.0, 0.0, 0.0, &cfg), 0.0);
        assert!((total_reward(1.0, 1.0, -0.5, &cfg) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let mut bad = RewardConfig::default();
        bad.w_throughput = 0.6;
        assert!(matches!(bad.validate(), Err(RewardError::WeightSum(_))));
        let mut bad = RewardConfig::default();
        bad.gamma = 1.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn latency_reward_decreasing_past_target(
            a in 0.0f64..5_000.0,
            b in 0.0f64..5_000.0,
        ) {
            let cfg = RewardConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(latency_reward(lo, &cfg) >= latency_reward(hi, &cfg));
        }

        // linear in each component
        #[test]
        fn total_reward_superposition(
            t in 0.0f64..1.0, l in 0.0f64..1.0, s in -0.5f64..0.0,
            t2 in 0.0f64..1.0, l2 in 0.0f64..1.0, s2 in -0.5f64..0.0,
        ) {
            let cfg = RewardConfig::default();
            let lhs = total_reward(t + t2, l + l2, s + s2, &cfg);
            let rhs = total_reward(t, l, s, &cfg) + total_reward(t2, l2, s2, &cfg);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        // with the discrete action set, the worst one-step stability
        // term is -0.5, so defaults bound the reward in [-0.05, 0.9]
        #[test]
        fn total_reward_range_under_defaults(
            t in 0.0f64..1.0, l in 0.0f64..1.0, s in -0.5f64..0.0,
        ) {
            let cfg = RewardConfig::default();
            let r = total_reward(t, l, s, &cfg);
            prop_assert!((-0.05..=0.9).contains(&r));
        }
    }

    #[test]
    fn latency_reward_continuous_at_target() {
        let cfg = RewardConfig::default();
        let just_past = latency_reward(500.0 + 1e-9, &cfg);
        assert!((just_past - 1.0).abs() < 1e-10);
    }
}
