//! Deep Q-learning: ε-greedy action selection with a linear
//! exploration schedule, TD targets from a periodically synchronized
//! target network, and batched Huber-loss updates from replay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use crate::nn::{huber, huber_grad, AdamState, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay_steps: u64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub huber_kappa: f64,
    pub grad_clip: f64,
    /// Hidden-layer widths of the Q-network.
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            target_sync_every: 1000,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay_steps: 50_000,
            gamma: 0.99,
            replay_capacity: 100_000,
            huber_kappa: 1.0,
            grad_clip: 10.0,
            hidden: vec![128, 256, 128],
        }
    }
}

impl DqnConfig {
    /// Full layer widths for the given environment shape.
    pub fn layer_sizes(&self, state_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(n_actions);
        sizes
    }
}

/// Linear exploration decay: `max(ε_min, ε0 − (t/T)·(ε0 − ε_min))`,
/// evaluated as `ε_min + (1 − t/T)⁺·(ε0 − ε_min)` so both endpoints
/// are exact.
pub fn epsilon(t: u64, cfg: &DqnConfig) -> f64 {
    let frac = t as f64 / cfg.epsilon_decay_steps as f64;
    cfg.epsilon_min + (1.0 - frac).max(0.0) * (cfg.epsilon_start - cfg.epsilon_min)
}

/// Greedy index with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Bootstrapped TD target: `r` for terminal transitions, else
/// `r + γ·max_a' Q_target(s', a')`.
pub fn td_target(reward: f64, next_state: &[f64], done: bool, target_net: &Mlp, gamma: f64) -> f64 {
    if done {
        return reward;
    }
    let q = target_net.forward(next_state);
    reward + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Q-network pair plus optimizer and replay storage.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub main: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub cfg: DqnConfig,
    /// Disabled by the target-network ablation: TD targets then come
    /// from the main net.
    pub use_target_net: bool,
}

impl DqnAgent {
    /// Main and target nets start bit-equal.
    pub fn new(layer_sizes: &[usize], cfg: DqnConfig, rng: &mut impl Rng) -> Self {
        let main = Mlp::new(layer_sizes, rng);
        let target = main.clone();
        let adam = AdamState::new(&main.param_shapes());
        DqnAgent {
            adam,
            target,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            main,
            cfg,
            use_target_net: true,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.main.output_dim()
    }

    pub fn greedy(&self, state: &[f64]) -> usize {
        argmax(&self.main.forward(state))
    }

    /// ε-greedy: uniform random with probability ε, else greedy.
    pub fn select(&self, state: &[f64], eps: f64, rng: &mut impl Rng) -> usize {
        debug_assert!((0.0..=1.0).contains(&eps));
        if rng.random::<f64>() < eps {
            rng.random_range(0..self.n_actions())
        } else {
            self.greedy(state)
        }
    }

    pub fn record(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One batched update from replay. Returns the batch loss, or
    /// `None` while the buffer is still below one batch (warm-up).
    pub fn update(&mut self, rng: &mut impl Rng) -> Option<f64> {
        if self.buffer.len() < self.cfg.batch_size {
            return None;
        }
        let indices = self.buffer.sample_indices(self.cfg.batch_size, rng);
        let batch: Vec<Transition> =
            indices.iter().map(|i| self.buffer.get(*i).clone()).collect();
        Some(self.update_from(&batch))
    }

    /// Huber TD update on an explicit batch (also the online path used
    /// by the no-replay ablation). Only the Q output of each taken
    /// action receives gradient.
    pub fn update_from(&mut self, batch: &[Transition]) -> f64 {
        assert!(!batch.is_empty(), "empty update batch");
        let dim = self.main.input_dim();
        let n = batch.len();
        let n_actions = self.n_actions();

        let mut xs = Vec::with_capacity(n * dim);
        let mut next_xs = Vec::with_capacity(n * dim);
        for t in batch {
            assert_eq!(t.state.len(), dim, "transition width mismatch");
            xs.extend_from_slice(&t.state);
            next_xs.extend_from_slice(&t.next_state);
        }

        let bootstrap_net = if self.use_target_net { &self.target } else { &self.main };
        let (next_q, _) = bootstrap_net.forward_batch(&next_xs, n);
        let (q, cache) = self.main.forward_batch(&xs, n);

        let mut upstream = vec![0.0; n * n_actions];
        let mut loss = 0.0;
        for (bi, t) in batch.iter().enumerate() {
            let target = if t.done {
                t.reward
            } else {
                let row = &next_q[bi * n_actions..(bi + 1) * n_actions];
                t.reward + self.cfg.gamma * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let predicted = q[bi * n_actions + t.action];
            let delta = target - predicted;
            loss += huber(delta, self.cfg.huber_kappa);
            // d mean-huber / d q[a] = -huber'(delta) / n
            upstream[bi * n_actions + t.action] =
                -huber_grad(delta, self.cfg.huber_kappa) / n as f64;
        }
        loss /= n as f64;

        let mut grads = self.main.backward_batch(&cache, &upstream);
        grads.clip_global_norm(self.cfg.grad_clip);
        self.adam.apply(&mut self.main.param_slices_mut(), &grads.slices(), self.cfg.lr);
        loss
    }

    /// Copy main-net parameters into the target on the configured
    /// cadence (step 0 counts: both start equal). Returns whether a
    /// sync happened.
    pub fn sync_target(&mut self, t: u64) -> bool {
        if t % self.cfg.target_sync_every == 0 {
            self.target.copy_params_from(&self.main);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn epsilon_schedule_endpoints_and_midpoint() {
        let cfg = DqnConfig::default();
        assert_eq!(epsilon(0, &cfg), 1.0);
        assert_eq!(epsilon(50_000, &cfg), 0.05);
        assert!((epsilon(25_000, &cfg) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon(80_000, &cfg), 0.05);
    }

    #[test]
    fn epsilon_non_increasing_and_bounded() {
        let cfg = DqnConfig::default();
        let mut prev = f64::INFINITY;
        for t in (0..120_000).step_by(500) {
            let e = epsilon(t, &cfg);
            assert!(e <= prev);
            assert!((cfg.epsilon_min..=cfg.epsilon_start).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn greedy_argmax_and_tie_break() {
        let mut agent = DqnAgent::new(&[2, 4, 7], DqnConfig::default(), &mut rng(1));
        // force a known Q row by zeroing and setting output biases
        for layer in &mut agent.main.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        agent.main.layers.last_mut().unwrap().b = vec![0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0];
        assert_eq!(agent.select(&[0.0, 0.0], 0.0, &mut rng(2)), 3);
        agent.main.layers.last_mut().unwrap().b = vec![0.0; 7];
        assert_eq!(agent.select(&[0.0, 0.0], 0.0, &mut rng(3)), 0); // ties -> lowest
    }

    #[test]
    fn full_exploration_is_uniform() {
        let agent = DqnAgent::new(&[1, 4, 5], DqnConfig::default(), &mut rng(4));
        let mut r = rng(5);
        let draws = 10_000;
        let mut counts = [0u32; 5];
        for _ in 0..draws {
            counts[agent.select(&[0.5], 1.0, &mut r)] += 1;
        }
        let expected = draws as f64 / 5.0;
        // 3 sigma binomial bound per arm
        let sigma = (draws as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn td_target_branches() {
        let mut zero_net = Mlp::new(&[2, 3], &mut rng(6));
        for layer in &mut zero_net.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(td_target(1.0, &[0.0, 0.0], true, &zero_net, 0.99), 1.0);
        assert_eq!(td_target(0.5, &[0.0, 0.0], false, &zero_net, 0.99), 0.5);
        zero_net.layers[0].b = vec![0.1, 0.9, 0.2];
        let t = td_target(0.0, &[0.0, 0.0], false, &zero_net, 0.99);
        assert!((t - 0.891).abs() < 1e-12);
        // gamma = 0 reduces to the reward for non-terminal transitions
        assert_eq!(td_target(0.25, &[0.0, 0.0], false, &zero_net, 0.0), 0.25);
    }

    #[test]
    fn sync_target_cadence() {
        let mut agent = DqnAgent::new(&[2, 8, 3], DqnConfig::default(), &mut rng(7));
        assert_eq!(agent.main, agent.target); // equal at init
        assert!(agent.sync_target(0));
        // drift the main net
        agent.main.layers[0].w[0] += 1.0;
        assert!(!agent.sync_target(999));
        assert_ne!(agent.main, agent.target);
        assert!(agent.sync_target(1000));
        assert_eq!(agent.main, agent.target);
        // bit-equal copies share greedy actions everywhere
        let mut r = rng(8);
        for _ in 0..20 {
            let s: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            assert_eq!(argmax(&agent.main.forward(&s)), argmax(&agent.target.forward(&s)));
        }
    }

    #[test]
    fn update_noop_until_warm() {
        let mut agent = DqnAgent::new(&[1, 4, 2], DqnConfig { batch_size: 8, ..Default::default() }, &mut rng(9));
        let mut r = rng(10);
        for i in 0..7 {
            assert!(agent.update(&mut r).is_none());
            agent.record(Transition {
                state: vec![0.0],
                action: i % 2,
                reward: 0.0,
                next_state: vec![0.0],
                done: true,
            });
        }
        agent.record(Transition {
            state: vec![0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            done: true,
        });
        assert!(agent.update(&mut r).is_some());
    }

    #[test]
    fn converged_fixed_point_keeps_loss_zero() {
        // buffer holds one repeated transition whose td_target equals
        // the current Q value -> zero loss, parameters unchanged
        let mut agent = DqnAgent::new(&[1, 3, 2], DqnConfig { batch_size: 4, ..Default::default() }, &mut rng(11));
        for layer in &mut agent.main.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        agent.target.copy_params_from(&agent.main);
        let t = Transition {
            state: vec![1.0],
            action: 0,
            reward: 0.0, // target = 0 + γ·0 = 0 = Q(s, 0)
            next_state: vec![1.0],
            done: false,
        };
        for _ in 0..8 {
            agent.record(t.clone());
        }
        let before = agent.main.clone();
        let loss = agent.update(&mut rng(12)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.main, before);
    }

    #[test]
    fn fresh_net_first_update_has_positive_finite_loss() {
        let mut agent = DqnAgent::new(
            &[3, 8, 4],
            DqnConfig { batch_size: 16, ..Default::default() },
            &mut rng(13),
        );
        let mut r = rng(14);
        for _ in 0..16 {
            agent.record(Transition {
                state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                action: r.random_range(0..4),
                reward: r.random_range(0.0..1.0),
                next_state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                done: false,
            });
        }
        let loss = agent.update(&mut r).unwrap();
        assert!(loss > 0.0 && loss.is_finite(), "loss {loss}");
        assert!(agent.main.params_finite());
    }

    #[test]
    fn bandit_convergence_to_better_arm() {
        // 1-state 2-action bandit, rewards {0, 1}, terminal steps:
        // tabular optimum is Q* = (0, 1)
        let cfg = DqnConfig { batch_size: 16, lr: 1e-3, epsilon_decay_steps: 800, ..Default::default() };
        let mut agent = DqnAgent::new(&[1, 16, 2], cfg, &mut rng(15));
        let mut r = rng(16);
        for t in 0..1500u64 {
            let eps = epsilon(t, &agent.cfg);
            let a = agent.select(&[1.0], eps, &mut r);
            let reward = if a == 1 { 1.0 } else { 0.0 };
            agent.record(Transition {
                state: vec![1.0],
                action: a,
                reward,
                next_state: vec![1.0],
                done: true,
            });
            agent.update(&mut r);
            agent.sync_target(t);
        }
        assert_eq!(agent.greedy(&[1.0]), 1);
        let q = agent.main.forward(&[1.0]);
        assert!((q[0] - 0.0).abs() < 0.25, "Q(0) = {}", q[0]);
        assert!((q[1] - 1.0).abs() < 0.25, "Q(1) = {}", q[1]);
    }
}
