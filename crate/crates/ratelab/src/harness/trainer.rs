//! The training loop: fused DQN/A3C decisions against the simulator,
//! per-step replay updates, target syncs, n-step actor-critic updates,
//! optional asynchronous workers on environment replicas, and
//! convergence logging with checkpoints.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::a3c::{a3c_loss, a3c_worker_run, sample_policy, A3cError, GlobalAc};
use crate::agents::dqn::{epsilon, DqnAgent};
use crate::agents::fusion::{alpha, fuse};
use crate::agents::{Environment, Transition};
use crate::nn::{checkpoint, ActorCriticNet};
use crate::reward::{latency_reward, stability_reward, throughput_reward, total_reward};
use crate::sim::{Simulator, StepOutcome, TrafficPattern};
use crate::state::{
    apply_action, encode_state, Action, NormalizationSpec, ACTION_COUNT, STATE_DIM,
};

use super::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or parameters at training step {step}")]
    NonFinite { step: u64, artifacts: Box<TrainArtifacts> },
    #[error(transparent)]
    Store(#[from] A3cError),
    #[error("environment setup failed: {0}")]
    Env(#[from] crate::sim::EnvError),
    #[error("invalid normalization bounds: {0}")]
    Norm(#[from] crate::state::StateError),
    #[error("checkpoint i/o failed: {0}")]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("output i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Keep the current threshold unless the minimum interval since the
/// last applied change has elapsed (or nothing would change).
pub fn min_interval_guard(
    last_change_time_s: f64,
    now_s: f64,
    proposed_theta: f64,
    current_theta: f64,
    min_interval_s: f64,
) -> f64 {
    debug_assert!(now_s >= last_change_time_s, "time must be monotone");
    if proposed_theta != current_theta && now_s - last_change_time_s < min_interval_s {
        current_theta
    } else {
        proposed_theta
    }
}

/// Stateful wrapper around [`min_interval_guard`] tracking the last
/// change time; no-op proposals leave the timer untouched.
#[derive(Debug, Clone)]
pub struct ChangeGate {
    pub min_interval_s: f64,
    last_change_s: f64,
}

impl ChangeGate {
    pub fn new(min_interval_s: f64) -> Self {
        // a fresh gate allows an immediate first change
        ChangeGate { min_interval_s, last_change_s: f64::NEG_INFINITY }
    }

    pub fn apply(&mut self, now_s: f64, proposed: f64, current: f64) -> f64 {
        let applied =
            min_interval_guard(self.last_change_s, now_s, proposed, current, self.min_interval_s);
        if applied != current {
            self.last_change_s = now_s;
        }
        applied
    }
}

/// Simulator wrapped as an agent-facing environment: encodes states,
/// applies actions to the threshold, computes the composite reward,
/// and tracks overload-collapse termination (error rate pinned at 1
/// for five consecutive steps).
pub struct RateLimitEnv {
    sim: Simulator,
    norm: NormalizationSpec,
    cfg: ExperimentConfig,
    collapse_streak: u32,
    gate: ChangeGate,
    /// Outcome of the most recent step, for logging and trace export.
    pub last_outcome: Option<StepOutcome>,
}

const COLLAPSE_STEPS: u32 = 5;

impl RateLimitEnv {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self, TrainError> {
        Self::with_pattern(cfg, cfg.pattern, seed)
    }

    pub fn with_pattern(
        cfg: &ExperimentConfig,
        pattern: TrafficPattern,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let env_cfg = crate::sim::EnvConfig { seed, ..cfg.env };
        let sim = Simulator::new(env_cfg, pattern)?;
        let norm = NormalizationSpec::from_parts(
            cfg.env.bounds,
            cfg.reward.tau_target_ms,
            cfg.env.queue_capacity as f64,
        )?;
        Ok(RateLimitEnv {
            sim,
            norm,
            cfg: cfg.clone(),
            collapse_streak: 0,
            gate: ChangeGate::new(cfg.min_update_interval_s),
            last_outcome: None,
        })
    }

    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    fn encode(&self) -> Vec<f64> {
        let mut v = encode_state(self.sim.state(), &self.norm).to_vec();
        if self.cfg.ablation.no_temporal {
            v[7] = 0.0;
            v[8] = 0.0;
        }
        v
    }
}

impl Environment for RateLimitEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn n_actions(&self) -> usize {
        ACTION_COUNT
    }

    fn observe(&self) -> Vec<f64> {
        self.encode()
    }

    fn step(&mut self, action: usize) -> (f64, bool) {
        let action = Action::from_index(action).expect("action index in range");
        let theta_prev = self.sim.state().threshold;
        let proposed = apply_action(theta_prev, action, &self.cfg.env.bounds);
        let theta_next = if self.cfg.min_update_interval_s > 0.0 {
            self.gate.apply(self.sim.sim_time_s(), proposed, theta_prev)
        } else {
            proposed
        };
        let outcome = self.sim.step(theta_next);

        let r_thr = throughput_reward(outcome.n_success, outcome.n_offered);
        let r_lat = latency_reward(outcome.mean_latency_ms, &self.cfg.reward);
        let r_stab = stability_reward(theta_prev, theta_next)
            .expect("threshold bounds keep theta positive");
        let reward = total_reward(r_thr, r_lat, r_stab, &self.cfg.reward);

        let collapsed = outcome.n_admitted > 0 && outcome.n_errors == outcome.n_admitted;
        self.collapse_streak = if collapsed { self.collapse_streak + 1 } else { 0 };
        let done = self.collapse_streak >= COLLAPSE_STEPS;

        self.last_outcome = Some(outcome);
        (reward, done)
    }

    fn reset(&mut self) {
        self.sim.reset_episode();
        self.collapse_streak = 0;
        self.gate = ChangeGate::new(self.cfg.min_update_interval_s);
        self.last_outcome = None;
    }
}

/// One convergence-log row, emitted per training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub cum_reward: f64,
    pub eps: f64,
    pub alpha: f64,
    pub dqn_loss: f64,
    pub a3c_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceLog {
    pub rows: Vec<EpisodeRow>,
    /// Wall-clock training time; reported on stdout, never written to
    /// the CSV (runs must be byte-comparable).
    pub wall_seconds: f64,
}

impl ConvergenceLog {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "episode,cum_reward,eps,alpha,dqn_loss,a3c_loss")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.episode, r.cum_reward, r.eps, r.alpha, r.dqn_loss, r.a3c_loss
            )?;
        }
        f.flush()
    }
}

/// Trained networks plus the convergence log.
#[derive(Debug)]
pub struct TrainArtifacts {
    pub dqn: DqnAgent,
    pub a3c: ActorCriticNet,
    pub log: ConvergenceLog,
    pub final_epsilon: f64,
    pub final_alpha: f64,
    pub steps: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for worker replica `i` derived from the run seed.
pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64).wrapping_mul(worker as u64 + 1)
}

/// Run the full training loop against `env`. Extra A3C workers (from
/// `worker_envs`) act asynchronously on their own replicas while the
/// main loop executes fused decisions; with an empty `worker_envs`
/// the run is sequential and bit-reproducible.
pub fn train_agents<E: Environment + Send>(
    cfg: &ExperimentConfig,
    seed: u64,
    env: &mut E,
    worker_envs: Vec<E>,
) -> Result<TrainArtifacts, TrainError> {
    let start = std::time::Instant::now();
    let state_dim = env.state_dim();
    let n_actions = env.n_actions();
    let fusion = cfg.resolved_fusion();
    let no_a3c = cfg.ablation.no_a3c;
    let no_replay = cfg.ablation.no_replay;

    let mut init_rng = stream_rng(seed, 1);
    let mut dqn = DqnAgent::new(&cfg.dqn.layer_sizes(state_dim, n_actions), cfg.dqn.clone(), &mut init_rng);
    dqn.use_target_net = !cfg.ablation.no_target_net;
    let ac_net = ActorCriticNet::new(&cfg.a3c.trunk_sizes(state_dim), n_actions, &mut init_rng);
    let global = GlobalAc::new(ac_net);

    let mut action_rng = stream_rng(seed, 2);
    let mut sample_rng = stream_rng(seed, 3);

    let stop = AtomicBool::new(false);
    let result = std::thread::scope(|scope| -> Result<TrainArtifacts, TrainError> {
        let mut handles = Vec::new();
        if !no_a3c {
            for (i, mut worker_env) in worker_envs.into_iter().enumerate() {
                let global_ref = &global;
                let stop_ref = &stop;
                let a3c_cfg = cfg.a3c.clone();
                let wseed = worker_seed(seed, i + 1);
                handles.push(scope.spawn(move || {
                    a3c_worker_run(
                        i + 1,
                        global_ref,
                        &mut worker_env,
                        &a3c_cfg,
                        stop_ref,
                        u64::MAX,
                        wseed,
                    )
                }));
            }
        }

        let run = || -> Result<TrainArtifacts, TrainError> {
            let mut local_ac = global.snapshot()?;
            let mut rollout: Vec<Transition> = Vec::with_capacity(cfg.a3c.n_step);
            let mut log = ConvergenceLog::default();
            let mut episode = 0u64;
            let mut ep_step = 0u64;
            let mut ep_reward = 0.0;
            let mut ep_dqn_loss_sum = 0.0;
            let mut ep_dqn_loss_n = 0u64;
            let mut ep_a3c_loss_sum = 0.0;
            let mut ep_a3c_loss_n = 0u64;
            let mut cur_eps = epsilon(0, &cfg.dqn);
            let mut cur_alpha = if no_a3c { 1.0 } else { alpha(0, &fusion) };

            for t in 0..cfg.training_steps {
                cur_eps = epsilon(t, &cfg.dqn);
                cur_alpha = if no_a3c { 1.0 } else { alpha(t, &fusion) };

                let state = env.observe();
                let dqn_action = dqn.select(&state, cur_eps, &mut action_rng);
                let action = if no_a3c {
                    dqn_action
                } else {
                    let a3c_action = sample_policy(&local_ac, &state, &mut action_rng);
                    fuse(dqn_action, a3c_action, cur_alpha, &mut action_rng)
                };

                let (reward, done) = env.step(action);
                let next_state = env.observe();
                let transition = Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    done,
                };
                ep_reward += reward;
                ep_step += 1;
                let horizon_end = ep_step >= cfg.episode_horizon;

                let loss = if no_replay {
                    Some(dqn.update_from(std::slice::from_ref(&transition)))
                } else {
                    dqn.record(transition.clone());
                    dqn.update(&mut sample_rng)
                };
                if let Some(l) = loss {
                    if !l.is_finite() {
                        stop.store(true, Ordering::Relaxed);
                        return Err(TrainError::NonFinite {
                            step: t,
                            artifacts: Box::new(TrainArtifacts {
                                dqn,
                                a3c: global.snapshot()?,
                                log,
                                final_epsilon: cur_eps,
                                final_alpha: cur_alpha,
                                steps: t,
                            }),
                        });
                    }
                    ep_dqn_loss_sum += l;
                    ep_dqn_loss_n += 1;
                }
                dqn.sync_target(t);

                if !no_a3c {
                    rollout.push(transition);
                    if rollout.len() >= cfg.a3c.n_step || done || horizon_end {
                        let (a3c_l, grads) = a3c_loss(&local_ac, &rollout, &cfg.a3c);
                        global.apply(&grads, &cfg.a3c)?;
                        local_ac = global.snapshot()?;
                        rollout.clear();
                        ep_a3c_loss_sum += a3c_l;
                        ep_a3c_loss_n += 1;
                    }
                }

                if done || horizon_end {
                    log.rows.push(EpisodeRow {
                        episode,
                        cum_reward: ep_reward,
                        eps: cur_eps,
                        alpha: cur_alpha,
                        dqn_loss: if ep_dqn_loss_n > 0 {
                            ep_dqn_loss_sum / ep_dqn_loss_n as f64
                        } else {
                            0.0
                        },
                        a3c_loss: if ep_a3c_loss_n > 0 {
                            ep_a3c_loss_sum / ep_a3c_loss_n as f64
                        } else {
                            0.0
                        },
                    });
                    episode += 1;
                    ep_step = 0;
                    ep_reward = 0.0;
                    ep_dqn_loss_sum = 0.0;
                    ep_dqn_loss_n = 0;
                    ep_a3c_loss_sum = 0.0;
                    ep_a3c_loss_n = 0;
                    env.reset();
                }

                if (t + 1) % 512 == 0 && !dqn.main.params_finite() {
                    stop.store(true, Ordering::Relaxed);
                    return Err(TrainError::NonFinite {
                        step: t,
                        artifacts: Box::new(TrainArtifacts {
                            dqn,
                            a3c: global.snapshot()?,
                            log,
                            final_epsilon: cur_eps,
                            final_alpha: cur_alpha,
                            steps: t,
                        }),
                    });
                }
            }

            Ok(TrainArtifacts {
                a3c: global.snapshot()?,
                dqn,
                log,
                final_epsilon: cur_eps,
                final_alpha: cur_alpha,
                steps: cfg.training_steps,
            })
        };

        let mut result = run();
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            // a worker hitting a poisoned/non-finite store is a real
            // failure; surface it unless the main loop already failed
            match h.join().expect("worker thread panicked") {
                Ok(_) => {}
                Err(e) => {
                    if result.is_ok() {
                        result = Err(TrainError::Store(e));
                    }
                }
            }
        }
        result
    });

    result.map(|mut artifacts| {
        artifacts.log.wall_seconds = start.elapsed().as_secs_f64();
        artifacts
    })
}

/// Checkpoint-set metadata written next to the network files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub steps: u64,
    pub final_epsilon: f64,
    pub final_alpha: f64,
    pub no_temporal: bool,
    pub dqn_main: String,
    pub dqn_target: String,
    pub a3c_global: String,
}

pub const MANIFEST_VERSION: u32 = 1;

/// Write checkpoints, manifest, and convergence log under `out_dir`.
pub fn save_run(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    artifacts: &TrainArtifacts,
) -> Result<Manifest, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    checkpoint::save_mlp(&out_dir.join("dqn_main.ckpt"), &artifacts.dqn.main, Some(&artifacts.dqn.adam))?;
    checkpoint::save_mlp(&out_dir.join("dqn_target.ckpt"), &artifacts.dqn.target, None)?;
    checkpoint::save_actor_critic(&out_dir.join("a3c_global.ckpt"), &artifacts.a3c, None)?;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed,
        steps: artifacts.steps,
        final_epsilon: artifacts.final_epsilon,
        final_alpha: artifacts.final_alpha,
        no_temporal: cfg.ablation.no_temporal,
        dqn_main: "dqn_main.ckpt".into(),
        dqn_target: "dqn_target.ckpt".into(),
        a3c_global: "a3c_global.ckpt".into(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    artifacts.log.write_csv(&out_dir.join("convergence.csv"))?;
    Ok(manifest)
}

/// Train on the configured simulator pattern and persist everything.
/// With `a3c.workers > 1`, the extra workers run concurrently on
/// environment replicas seeded per worker.
pub fn train(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<TrainArtifacts, TrainError> {
    let mut env = RateLimitEnv::new(cfg, seed)?;
    let worker_envs = if cfg.ablation.no_a3c || cfg.a3c.workers <= 1 {
        Vec::new()
    } else {
        (1..cfg.a3c.workers)
            .map(|i| RateLimitEnv::new(cfg, worker_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()?
    };
    match train_agents(cfg, seed, &mut env, worker_envs) {
        Ok(artifacts) => {
            save_run(out_dir, cfg, seed, &artifacts)?;
            Ok(artifacts)
        }
        Err(TrainError::NonFinite { step, artifacts }) => {
            // dump whatever state exists for post-mortem
            let diag = out_dir.join("diagnostic");
            save_run(&diag, cfg, seed, &artifacts)?;
            Err(TrainError::NonFinite { step, artifacts })
        }
        Err(e) => Err(e),
    }
}
