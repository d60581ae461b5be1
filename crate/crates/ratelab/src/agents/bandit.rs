//! Minimal one-state environments with known optima, used to sanity
//! check agent convergence against a tabular oracle.

use super::Environment;

/// Single state, two arms, deterministic rewards, every step terminal.
/// With one-step episodes the optimal action values are exactly the
/// arm rewards.
#[derive(Debug, Clone)]
pub struct TwoArmedBandit {
    pub arm_rewards: [f64; 2],
}

impl Default for TwoArmedBandit {
    fn default() -> Self {
        TwoArmedBandit { arm_rewards: [0.0, 1.0] }
    }
}

impl TwoArmedBandit {
    pub fn optimal_arm(&self) -> usize {
        if self.arm_rewards[1] > self.arm_rewards[0] {
            1
        } else {
            0
        }
    }
}

impl Environment for TwoArmedBandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn observe(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&mut self, action: usize) -> (f64, bool) {
        (self.arm_rewards[action], true)
    }

    fn reset(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_contract() {
        let mut env = TwoArmedBandit::default();
        assert_eq!(env.observe(), vec![1.0]);
        assert_eq!(env.step(0), (0.0, true));
        assert_eq!(env.step(1), (1.0, true));
        assert_eq!(env.optimal_arm(), 1);
    }
}
