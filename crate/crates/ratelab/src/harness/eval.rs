//! Frozen-policy evaluation, the cross-pattern comparison table, the
//! component ablation table, and the baseline tuning sweep, all
//! emitted as CSV.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::dqn::argmax;
use crate::agents::fusion::fuse;
use crate::baselines::{
    Aimd, AimdConfig, Controller, CpuProportional, CpuProportionalConfig, FixedConfig,
    FixedThreshold, Pid, PidConfig, SimpleDqn,
};
use crate::nn::{ActorCriticNet, Mlp};
use crate::reward::{latency_reward, stability_reward, throughput_reward, total_reward};
use crate::sim::{Simulator, TrafficKind, TrafficPattern};
use crate::state::{apply_action, encode_state, Action, NormalizationSpec, ThresholdBounds};

use super::config::{AblationFlags, ExperimentConfig};
use super::metrics::{percentile, EvalConstraints, EvalReport};
use super::trainer::{train_agents, ChangeGate, RateLimitEnv, TrainArtifacts, TrainError};
use super::HarnessError;

/// Evaluation traffic is decorrelated from the training stream.
const EVAL_SEED_SALT: u64 = 0x5EED_0E7A_15AB_1E00;
/// Tuning runs use their own seeds, distinct from evaluation seeds.
const TUNE_SEED_SALT: u64 = 0x7E57_7E57_0000_0001;

/// The trained hybrid agent frozen for evaluation: greedy DQN
/// candidate, most-probable A3C candidate, fused at the final α.
pub struct HybridPolicy {
    pub dqn: Mlp,
    pub a3c: ActorCriticNet,
    pub alpha: f64,
    pub norm: NormalizationSpec,
    pub bounds: ThresholdBounds,
    /// Pure argmax arbitration instead of the probabilistic coin.
    pub deterministic: bool,
    /// Matches the no-temporal ablation the nets were trained with.
    pub zero_temporal: bool,
    rng: ChaCha8Rng,
}

impl HybridPolicy {
    pub fn new(
        dqn: Mlp,
        a3c: ActorCriticNet,
        alpha: f64,
        norm: NormalizationSpec,
        bounds: ThresholdBounds,
        deterministic: bool,
        zero_temporal: bool,
        rng_seed: u64,
    ) -> Self {
        HybridPolicy {
            dqn,
            a3c,
            alpha,
            norm,
            bounds,
            deterministic,
            zero_temporal,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn from_artifacts(
        artifacts: &TrainArtifacts,
        cfg: &ExperimentConfig,
        deterministic: bool,
        rng_seed: u64,
    ) -> Result<Self, HarnessError> {
        let norm = NormalizationSpec::from_parts(
            cfg.env.bounds,
            cfg.reward.tau_target_ms,
            cfg.env.queue_capacity as f64,
        )?;
        Ok(HybridPolicy::new(
            artifacts.dqn.main.clone(),
            artifacts.a3c.clone(),
            artifacts.final_alpha,
            norm,
            cfg.env.bounds,
            deterministic,
            cfg.ablation.no_temporal,
            rng_seed,
        ))
    }
}

impl Controller for HybridPolicy {
    fn decide(&mut self, state: &crate::state::SystemState) -> f64 {
        let mut encoded = encode_state(state, &self.norm);
        if self.zero_temporal {
            encoded[7] = 0.0;
            encoded[8] = 0.0;
        }
        let dqn_action = argmax(&self.dqn.forward(&encoded));
        let a3c_action = argmax(&self.a3c.forward(&encoded).0);
        let chosen = if self.deterministic {
            if self.alpha >= 0.5 {
                dqn_action
            } else {
                a3c_action
            }
        } else {
            fuse(dqn_action, a3c_action, self.alpha, &mut self.rng)
        };
        let action = Action::from_index(chosen).expect("action index in range");
        apply_action(state.threshold, action, &self.bounds)
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "hybrid"
    }
}

/// Run `eval_duration` frozen-policy steps and aggregate the report.
/// Latency percentiles and SLA compliance come from the pooled
/// per-step samples; availability and throughput from exact counts.
pub fn evaluate(
    policy: &mut dyn Controller,
    cfg: &ExperimentConfig,
    pattern: TrafficPattern,
    seed: u64,
    constraints: &EvalConstraints,
    trace_out: Option<&Path>,
) -> Result<EvalReport, HarnessError> {
    let env_cfg = crate::sim::EnvConfig { seed: seed ^ EVAL_SEED_SALT, ..cfg.env };
    let mut sim = Simulator::new(env_cfg, pattern)?;
    policy.reset();
    let mut gate = ChangeGate::new(cfg.min_update_interval_s);

    let mut samples: Vec<f64> = Vec::new();
    let mut offered = 0u64;
    let mut success = 0u64;
    let mut cpu_sum = 0.0;
    let mut mem_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut viol_latency = 0u64;
    let mut viol_error = 0u64;
    let mut viol_resource = 0u64;
    let mut trace: Vec<String> = Vec::new();

    for _ in 0..cfg.eval_duration {
        let state = *sim.state();
        let proposed = policy.decide(&state);
        let theta = if cfg.min_update_interval_s > 0.0 {
            gate.apply(sim.sim_time_s(), proposed, state.threshold)
        } else {
            proposed
        };
        let out = sim.step(theta);

        offered += out.n_offered;
        success += out.n_success;
        samples.extend_from_slice(&out.latency_samples);
        cpu_sum += out.next_state.cpu_util;
        mem_sum += out.next_state.mem_util;

        let r_thr = throughput_reward(out.n_success, out.n_offered);
        let r_lat = latency_reward(out.mean_latency_ms, &cfg.reward);
        let r_stab = stability_reward(state.threshold, theta)
            .expect("bounds keep thresholds positive");
        reward_sum += total_reward(r_thr, r_lat, r_stab, &cfg.reward);

        if out.next_state.avg_latency_ms > constraints.tau_max_ms {
            viol_latency += 1;
        }
        if out.next_state.error_rate > constraints.delta_error {
            viol_error += 1;
        }
        if out.next_state.cpu_util.max(out.next_state.mem_util) > constraints.rho_max {
            viol_resource += 1;
        }

        if trace_out.is_some() {
            let p50 = percentile(&out.latency_samples, 0.5).unwrap_or(0.0);
            trace.push(format!(
                "{},{},{},{}",
                sim.sim_time_s(),
                out.n_offered,
                out.n_admitted,
                p50
            ));
        }
    }

    if let Some(path) = trace_out {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "time_s,offered,admitted,latency_p50_ms")?;
        for row in &trace {
            writeln!(f, "{row}")?;
        }
        f.flush()?;
    }

    let steps = cfg.eval_duration as f64;
    let degenerate = offered == 0 || samples.is_empty();
    let sla_target = cfg.reward.tau_target_ms;
    let sla_hits = samples.iter().filter(|s| **s <= sla_target).count();
    Ok(EvalReport {
        policy: policy.name().to_string(),
        pattern: format!("{}", pattern.kind),
        seed,
        throughput_rps: success as f64 / (steps * cfg.env.step_duration_s),
        p50_ms: percentile(&samples, 0.5).unwrap_or(0.0),
        p90_ms: percentile(&samples, 0.9).unwrap_or(0.0),
        p99_ms: percentile(&samples, 0.99).unwrap_or(0.0),
        availability: if offered == 0 { 0.0 } else { success as f64 / offered as f64 },
        sla_compliance: if samples.is_empty() {
            0.0
        } else {
            sla_hits as f64 / samples.len() as f64
        },
        mean_cpu: cpu_sum / steps,
        mean_mem: mem_sum / steps,
        violation_latency: viol_latency as f64 / steps,
        violation_error: viol_error as f64 / steps,
        violation_resource: viol_resource as f64 / steps,
        mean_reward: reward_sum / steps,
        degenerate,
    })
}

/// Policies the comparison table can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Hybrid,
    SimpleDqn,
    FixedTuned,
    FixedUntuned,
    Cpu,
    Aimd,
    Pid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Hybrid,
        PolicyKind::SimpleDqn,
        PolicyKind::FixedTuned,
        PolicyKind::FixedUntuned,
        PolicyKind::Cpu,
        PolicyKind::Aimd,
        PolicyKind::Pid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Hybrid => "hybrid",
            PolicyKind::SimpleDqn => "simple-dqn",
            PolicyKind::FixedTuned => "fixed",
            PolicyKind::FixedUntuned => "fixed-untuned",
            PolicyKind::Cpu => "cpu",
            PolicyKind::Aimd => "aimd",
            PolicyKind::Pid => "pid",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Best controller settings found by the tuning sweep, per pattern.
#[derive(Debug, Clone, Default)]
pub struct TunedSet {
    pub fixed: FixedConfig,
    pub cpu: CpuProportionalConfig,
    pub aimd: AimdConfig,
    pub pid: PidConfig,
}

/// One grid point of the tuning sweep.
#[derive(Debug, Clone)]
pub struct TuneRow {
    pub controller: &'static str,
    pub pattern: String,
    pub params: String,
    pub score: f64,
    pub best: bool,
}

fn pattern_with_kind(template: &TrafficPattern, kind: TrafficKind) -> TrafficPattern {
    TrafficPattern { kind, ..*template }
}

fn mean_score_over_tuning_seeds(
    make: &mut dyn FnMut() -> Box<dyn Controller>,
    cfg: &ExperimentConfig,
    pattern: TrafficPattern,
) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    let tuning_seeds = [cfg.seeds[0] ^ TUNE_SEED_SALT, cfg.seeds[0] ^ (TUNE_SEED_SALT << 1)];
    for seed in tuning_seeds {
        let mut c = make();
        let report = evaluate(c.as_mut(), cfg, pattern, seed, &cfg.constraints, None)?;
        total += report.mean_reward;
    }
    Ok(total / 2.0)
}

/// Grid-search each classic baseline on each traffic pattern, scored
/// by mean composite reward on tuning seeds. Returns the sweep rows
/// and the per-pattern winners.
pub fn tune_baselines(
    cfg: &ExperimentConfig,
    patterns: &[TrafficKind],
) -> Result<(Vec<TuneRow>, BTreeMap<String, TunedSet>), HarnessError> {
    let bounds = cfg.env.bounds;
    let mu = cfg.env.service_capacity;
    let mut rows = Vec::new();
    let mut tuned: BTreeMap<String, TunedSet> = BTreeMap::new();

    for kind in patterns {
        let pattern = pattern_with_kind(&cfg.pattern, *kind);
        let mut set = TunedSet::default();

        // fixed threshold: fractions of nominal capacity
        let mut best = (f64::NEG_INFINITY, FixedConfig::default());
        let mut fixed_rows = Vec::new();
        for frac in [0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 1.0, 1.1, 1.25, 1.5, 2.0] {
            let candidate = FixedConfig { theta_fixed: bounds.clamp(mu * frac) };
            let score = mean_score_over_tuning_seeds(
                &mut || Box::new(FixedThreshold::new(candidate, bounds)),
                cfg,
                pattern,
            )?;
            fixed_rows.push(TuneRow {
                controller: "fixed",
                pattern: format!("{kind}"),
                params: format!("theta_fixed={}", candidate.theta_fixed),
                score,
                best: false,
            });
            if score > best.0 {
                best = (score, candidate);
            }
        }
        mark_best(&mut fixed_rows, best.0);
        rows.extend(fixed_rows);
        set.fixed = best.1;

        // cpu-proportional: gain x setpoint
        let mut best = (f64::NEG_INFINITY, CpuProportionalConfig::default());
        let mut cpu_rows = Vec::new();
        for gain in [0.2, 0.5, 1.0] {
            for setpoint in [0.6, 0.7, 0.8] {
                let candidate = CpuProportionalConfig { gain, setpoint };
                let score = mean_score_over_tuning_seeds(
                    &mut || Box::new(CpuProportional::new(candidate, bounds)),
                    cfg,
                    pattern,
                )?;
                cpu_rows.push(TuneRow {
                    controller: "cpu",
                    pattern: format!("{kind}"),
                    params: format!("gain={gain},setpoint={setpoint}"),
                    score,
                    best: false,
                });
                if score > best.0 {
                    best = (score, candidate);
                }
            }
        }
        mark_best(&mut cpu_rows, best.0);
        rows.extend(cpu_rows);
        set.cpu = best.1;

        // aimd: additive step x decrease factor
        let mut best = (f64::NEG_INFINITY, AimdConfig::default());
        let mut aimd_rows = Vec::new();
        for step in [20.0, 50.0, 100.0] {
            for factor in [0.5, 0.7, 0.85] {
                let candidate = AimdConfig {
                    additive_step: step,
                    decrease_factor: factor,
                    tau_target_ms: cfg.reward.tau_target_ms,
                    ..AimdConfig::default()
                };
                let score = mean_score_over_tuning_seeds(
                    &mut || Box::new(Aimd::new(candidate, bounds)),
                    cfg,
                    pattern,
                )?;
                aimd_rows.push(TuneRow {
                    controller: "aimd",
                    pattern: format!("{kind}"),
                    params: format!("additive_step={step},decrease_factor={factor}"),
                    score,
                    best: false,
                });
                if score > best.0 {
                    best = (score, candidate);
                }
            }
        }
        mark_best(&mut aimd_rows, best.0);
        rows.extend(aimd_rows);
        set.aimd = best.1;

        // pid: kp x ki x kd
        let mut best = (f64::NEG_INFINITY, PidConfig::default());
        let mut pid_rows = Vec::new();
        for kp in [0.5, 1.0, 2.0] {
            for ki in [0.02, 0.1] {
                for kd in [0.0, 0.05] {
                    let candidate = PidConfig {
                        kp,
                        ki,
                        kd,
                        tau_target_ms: cfg.reward.tau_target_ms,
                        ..PidConfig::default()
                    };
                    let score = mean_score_over_tuning_seeds(
                        &mut || Box::new(Pid::new(candidate, bounds, cfg.env.step_duration_s)),
                        cfg,
                        pattern,
                    )?;
                    pid_rows.push(TuneRow {
                        controller: "pid",
                        pattern: format!("{kind}"),
                        params: format!("kp={kp},ki={ki},kd={kd}"),
                        score,
                        best: false,
                    });
                    if score > best.0 {
                        best = (score, candidate);
                    }
                }
            }
        }
        mark_best(&mut pid_rows, best.0);
        rows.extend(pid_rows);
        set.pid = best.1;

        tuned.insert(format!("{kind}"), set);
    }
    Ok((rows, tuned))
}

fn mark_best(rows: &mut [TuneRow], best_score: f64) {
    for r in rows.iter_mut() {
        if r.score == best_score {
            r.best = true;
            return; // first occurrence only
        }
    }
}

pub fn write_tuning_csv(rows: &[TuneRow], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "controller,pattern,params,score,best")?;
    for r in rows {
        writeln!(f, "{},{},\"{}\",{},{}", r.controller, r.pattern, r.params, r.score, r.best)?;
    }
    f.flush()
}

/// Per-(policy, pattern) seed means with percentage deltas against the
/// tuned fixed baseline.
#[derive(Debug, Clone)]
pub struct MeanRow {
    pub policy: String,
    pub pattern: String,
    pub throughput_rps: f64,
    pub p99_ms: f64,
    pub availability: f64,
    pub sla_compliance: f64,
    pub mean_reward: f64,
    pub delta_throughput_pct: Option<f64>,
    pub delta_p99_pct: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct CompareOutput {
    pub rows: Vec<EvalReport>,
    pub means: Vec<MeanRow>,
}

/// Train/tune every requested policy and evaluate each
/// (policy × pattern × seed) cell. Learned policies are trained per
/// pattern and seed; classic controllers are tuned per pattern first.
pub fn compare(
    cfg: &ExperimentConfig,
    kinds: &[PolicyKind],
    patterns: &[TrafficKind],
) -> Result<CompareOutput, HarnessError> {
    let needs_tuning = kinds.iter().any(|k| {
        matches!(k, PolicyKind::FixedTuned | PolicyKind::Cpu | PolicyKind::Aimd | PolicyKind::Pid)
    });
    let tuned = if needs_tuning {
        tune_baselines(cfg, patterns)?.1
    } else {
        BTreeMap::new()
    };

    let mut rows = Vec::new();
    for kind in patterns {
        let pattern = pattern_with_kind(&cfg.pattern, *kind);
        let tuned_set = tuned.get(&format!("{kind}")).cloned().unwrap_or_default();
        for policy_kind in kinds {
            for &seed in &cfg.seeds {
                let mut policy: Box<dyn Controller> = match policy_kind {
                    PolicyKind::Hybrid => {
                        let artifacts = train_for(cfg, pattern, seed, AblationFlags::default())?;
                        Box::new(HybridPolicy::from_artifacts(&artifacts, cfg, false, seed)?)
                    }
                    PolicyKind::SimpleDqn => {
                        let flags = AblationFlags { no_a3c: true, ..Default::default() };
                        let artifacts = train_for(cfg, pattern, seed, flags)?;
                        let norm = NormalizationSpec::from_parts(
                            cfg.env.bounds,
                            cfg.reward.tau_target_ms,
                            cfg.env.queue_capacity as f64,
                        )?;
                        Box::new(SimpleDqn::new(artifacts.dqn.main.clone(), norm, cfg.env.bounds))
                    }
                    PolicyKind::FixedTuned => {
                        Box::new(FixedThreshold::new(tuned_set.fixed, cfg.env.bounds))
                    }
                    PolicyKind::FixedUntuned => Box::new(FixedThreshold::new(
                        FixedConfig { theta_fixed: cfg.env.service_capacity },
                        cfg.env.bounds,
                    )),
                    PolicyKind::Cpu => {
                        Box::new(CpuProportional::new(tuned_set.cpu, cfg.env.bounds))
                    }
                    PolicyKind::Aimd => Box::new(Aimd::new(tuned_set.aimd, cfg.env.bounds)),
                    PolicyKind::Pid => {
                        Box::new(Pid::new(tuned_set.pid, cfg.env.bounds, cfg.env.step_duration_s))
                    }
                };
                let mut report =
                    evaluate(policy.as_mut(), cfg, pattern, seed, &cfg.constraints, None)?;
                report.policy = policy_kind.name().to_string();
                rows.push(report);
            }
        }
    }

    let means = summarize(&rows, "fixed");
    Ok(CompareOutput { rows, means })
}

/// Train one run of the given variant for a specific pattern.
pub fn train_for(
    cfg: &ExperimentConfig,
    pattern: TrafficPattern,
    seed: u64,
    flags: AblationFlags,
) -> Result<TrainArtifacts, TrainError> {
    let mut run_cfg = cfg.clone();
    run_cfg.pattern = pattern;
    run_cfg.ablation = flags;
    let mut env = RateLimitEnv::with_pattern(&run_cfg, pattern, seed)?;
    let worker_envs = if flags.no_a3c || run_cfg.a3c.workers <= 1 {
        Vec::new()
    } else {
        (1..run_cfg.a3c.workers)
            .map(|i| {
                RateLimitEnv::with_pattern(&run_cfg, pattern, super::trainer::worker_seed(seed, i))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    train_agents(&run_cfg, seed, &mut env, worker_envs)
}

/// Seed-mean per (policy, pattern) plus deltas vs `baseline_policy`.
pub fn summarize(rows: &[EvalReport], baseline_policy: &str) -> Vec<MeanRow> {
    let mut groups: BTreeMap<(String, String), Vec<&EvalReport>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.policy.clone(), r.pattern.clone())).or_default().push(r);
    }
    let mean =
        |v: &[&EvalReport], f: fn(&EvalReport) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / v.len() as f64;

    let mut baseline: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for ((policy, pattern), v) in &groups {
        if policy == baseline_policy {
            baseline.insert(
                pattern.clone(),
                (mean(v, |r| r.throughput_rps), mean(v, |r| r.p99_ms)),
            );
        }
    }

    groups
        .into_iter()
        .map(|((policy, pattern), v)| {
            let throughput = mean(&v, |r| r.throughput_rps);
            let p99 = mean(&v, |r| r.p99_ms);
            let (dt, dp) = match baseline.get(&pattern) {
                Some((bt, bp)) if policy != baseline_policy => (
                    Some((throughput - bt) / bt * 100.0),
                    Some((p99 - bp) / bp * 100.0),
                ),
                _ => (None, None),
            };
            MeanRow {
                policy,
                pattern,
                throughput_rps: throughput,
                p99_ms: p99,
                availability: mean(&v, |r| r.availability),
                sla_compliance: mean(&v, |r| r.sla_compliance),
                mean_reward: mean(&v, |r| r.mean_reward),
                delta_throughput_pct: dt,
                delta_p99_pct: dp,
            }
        })
        .collect()
}

pub fn write_compare_csv(out: &CompareOutput, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "policy,pattern,seed,throughput_rps,p50_ms,p90_ms,p99_ms,availability,\
         sla_compliance,mean_cpu,mean_mem,violation_latency,violation_error,\
         violation_resource,mean_reward,degenerate,delta_throughput_pct,delta_p99_pct"
    )?;
    for r in &out.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},,",
            r.policy,
            r.pattern,
            r.seed,
            r.throughput_rps,
            r.p50_ms,
            r.p90_ms,
            r.p99_ms,
            r.availability,
            r.sla_compliance,
            r.mean_cpu,
            r.mean_mem,
            r.violation_latency,
            r.violation_error,
            r.violation_resource,
            r.mean_reward,
            r.degenerate
        )?;
    }
    for m in &out.means {
        let dt = m.delta_throughput_pct.map(|v| v.to_string()).unwrap_or_default();
        let dp = m.delta_p99_pct.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},mean,{},,,{},{},{},,,,,,{},,{},{}",
            m.policy,
            m.pattern,
            m.throughput_rps,
            m.p99_ms,
            m.availability,
            m.sla_compliance,
            m.mean_reward,
            dt,
            dp
        )?;
    }
    f.flush()
}

/// One ablation training/evaluation cell.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub composite: f64,
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub variant: &'static str,
    pub mean_composite: f64,
    pub pct_of_full: f64,
}

/// Train and evaluate every ablation variant under identical seeds;
/// the composite score is the mean per-step evaluation reward, and
/// each variant is reported as a percentage of the full model.
pub fn ablate(
    cfg: &ExperimentConfig,
) -> Result<(Vec<AblationRow>, Vec<AblationSummary>), HarnessError> {
    let mut rows = Vec::new();
    for variant in AblationFlags::VARIANTS {
        let flags = AblationFlags::variant(variant).expect("known variant");
        for &seed in &cfg.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.ablation = flags;
            let artifacts = train_for(&run_cfg, cfg.pattern, seed, flags)?;
            let mut policy = HybridPolicy::from_artifacts(&artifacts, &run_cfg, false, seed)?;
            let report =
                evaluate(&mut policy, &run_cfg, cfg.pattern, seed, &cfg.constraints, None)?;
            rows.push(AblationRow { variant, seed, composite: report.mean_reward });
        }
    }

    let mean_of = |variant: &str| {
        let v: Vec<f64> =
            rows.iter().filter(|r| r.variant == variant).map(|r| r.composite).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let full = mean_of("full");
    let summaries = AblationFlags::VARIANTS
        .iter()
        .map(|variant| {
            let mean_composite = mean_of(variant);
            AblationSummary {
                variant,
                mean_composite,
                pct_of_full: mean_composite / full * 100.0,
            }
        })
        .collect();
    Ok((rows, summaries))
}

pub fn write_ablation_csv(
    rows: &[AblationRow],
    summaries: &[AblationSummary],
    path: &Path,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "variant,seed,composite,pct_of_full")?;
    for r in rows {
        writeln!(f, "{},{},{},", r.variant, r.seed, r.composite)?;
    }
    for s in summaries {
        writeln!(f, "{},mean,{},{}", s.variant, s.mean_composite, s.pct_of_full)?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.training_steps = 200;
        cfg.episode_horizon = 50;
        cfg.eval_duration = 40;
        cfg.dqn.hidden = vec![16];
        cfg.dqn.batch_size = 8;
        cfg.a3c.trunk_hidden = vec![16];
        cfg.a3c.n_step = 10;
        cfg.a3c.workers = 1;
        cfg.seeds = vec![1, 2];
        cfg
    }

    #[test]
    fn evaluate_light_traffic_has_full_availability() {
        // offered far below a generous fixed threshold: nothing binds
        let mut cfg = tiny_cfg();
        cfg.env.capacity_drift_std = 0.0;
        cfg.pattern = TrafficPattern::periodic(300.0);
        cfg.pattern.peak_to_valley = 1.0;
        let mut fixed = FixedThreshold::new(FixedConfig { theta_fixed: 500.0 }, cfg.env.bounds);
        let report =
            evaluate(&mut fixed, &cfg, cfg.pattern, 1, &cfg.constraints, None).unwrap();
        assert_eq!(report.availability, 1.0);
        assert!(!report.degenerate);
        assert!(report.p50_ms <= report.p90_ms && report.p90_ms <= report.p99_ms);
        assert!(report.throughput_rps > 250.0);
    }

    #[test]
    fn evaluate_degenerate_when_no_traffic() {
        let mut cfg = tiny_cfg();
        cfg.pattern = TrafficPattern::periodic(1e-9);
        cfg.pattern.peak_to_valley = 1.0;
        let mut fixed = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        let report =
            evaluate(&mut fixed, &cfg, cfg.pattern, 1, &cfg.constraints, None).unwrap();
        assert!(report.degenerate);
    }

    #[test]
    fn evaluate_overload_availability_matches_capacity_ratio() {
        // offered = 10x capacity with the limiter wide open: the
        // backend binds, availability ≈ 0.1
        let mut cfg = tiny_cfg();
        cfg.env.capacity_drift_std = 0.0;
        cfg.eval_duration = 100;
        cfg.pattern = TrafficPattern::periodic(10_000.0);
        cfg.pattern.peak_to_valley = 1.0;
        let mut wide_open =
            FixedThreshold::new(FixedConfig { theta_fixed: 20_000.0 }, cfg.env.bounds);
        let report =
            evaluate(&mut wide_open, &cfg, cfg.pattern, 1, &cfg.constraints, None).unwrap();
        assert!((report.availability - 0.1).abs() < 0.02, "avail {}", report.availability);
    }

    #[test]
    fn evaluate_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let mut a = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        let mut b = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        let ra = evaluate(&mut a, &cfg, cfg.pattern, 9, &cfg.constraints, None).unwrap();
        let rb = evaluate(&mut b, &cfg, cfg.pattern, 9, &cfg.constraints, None).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn trace_export_writes_rows() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut fixed = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        evaluate(&mut fixed, &cfg, cfg.pattern, 1, &cfg.constraints, Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time_s,offered,admitted,latency_p50_ms");
        assert_eq!(lines.len() as u64, 1 + cfg.eval_duration);
    }

    #[test]
    fn summarize_self_comparison_has_zero_deltas() {
        let cfg = tiny_cfg();
        let mut fixed = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        let mut r1 = evaluate(&mut fixed, &cfg, cfg.pattern, 1, &cfg.constraints, None).unwrap();
        r1.policy = "fixed".into();
        let mut r2 = r1.clone();
        r2.policy = "twin".into();
        let means = summarize(&[r1, r2], "fixed");
        let twin = means.iter().find(|m| m.policy == "twin").unwrap();
        assert_eq!(twin.delta_throughput_pct, Some(0.0));
        assert_eq!(twin.delta_p99_pct, Some(0.0));
        let fixed_row = means.iter().find(|m| m.policy == "fixed").unwrap();
        assert!(fixed_row.delta_throughput_pct.is_none());
    }

    #[test]
    fn summarize_deltas_recompute_from_absolutes() {
        let cfg = tiny_cfg();
        let mut fixed = FixedThreshold::new(FixedConfig::default(), cfg.env.bounds);
        let mut cpu = CpuProportional::new(CpuProportionalConfig::default(), cfg.env.bounds);
        let mut rows = Vec::new();
        for seed in [1u64, 2] {
            let mut r = evaluate(&mut fixed, &cfg, cfg.pattern, seed, &cfg.constraints, None).unwrap();
            r.policy = "fixed".into();
            rows.push(r);
            let mut r = evaluate(&mut cpu, &cfg, cfg.pattern, seed, &cfg.constraints, None).unwrap();
            r.policy = "cpu".into();
            rows.push(r);
        }
        let means = summarize(&rows, "fixed");
        let fixed_mean = means.iter().find(|m| m.policy == "fixed").unwrap();
        let cpu_mean = means.iter().find(|m| m.policy == "cpu").unwrap();
        let expect =
            (cpu_mean.throughput_rps - fixed_mean.throughput_rps) / fixed_mean.throughput_rps * 100.0;
        assert!((cpu_mean.delta_throughput_pct.unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn tuning_sweep_marks_exactly_one_best_per_controller_pattern() {
        let mut cfg = tiny_cfg();
        cfg.eval_duration = 20;
        let (rows, tuned) = tune_baselines(&cfg, &[TrafficKind::Periodic]).unwrap();
        for controller in ["fixed", "cpu", "aimd", "pid"] {
            let n_best = rows
                .iter()
                .filter(|r| r.controller == controller && r.best)
                .count();
            assert_eq!(n_best, 1, "{controller}");
        }
        assert!(tuned.contains_key("periodic"));
    }

    #[test]
    fn compare_produces_expected_shape() {
        let mut cfg = tiny_cfg();
        cfg.seeds = vec![1];
        cfg.eval_duration = 20;
        let out = compare(
            &cfg,
            &[PolicyKind::FixedUntuned, PolicyKind::Aimd],
            &[TrafficKind::Periodic],
        )
        .unwrap();
        assert_eq!(out.rows.len(), 2); // 2 policies x 1 pattern x 1 seed
        assert_eq!(out.means.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        write_compare_csv(&out, &dir.path().join("compare.csv")).unwrap();
    }
}
