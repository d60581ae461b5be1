//! Command-line entry point: train, evaluate, compare, ablate, and
//! tune-baselines, all driven by one TOML experiment config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ratelab::baselines::{
    Aimd, AimdConfig, Controller, CpuProportional, CpuProportionalConfig, FixedConfig,
    FixedThreshold, Pid, PidConfig, SimpleDqn,
};
use ratelab::harness::eval::{write_ablation_csv, write_compare_csv, write_tuning_csv};
use ratelab::harness::trainer::Manifest;
use ratelab::harness::{
    ablate, compare, evaluate, load_config, tune_baselines, ExperimentConfig, HybridPolicy,
    PolicyKind,
};
use ratelab::nn::checkpoint;
use ratelab::sim::TrafficKind;
use ratelab::state::NormalizationSpec;

#[derive(Parser)]
#[command(
    name = "ratelab",
    about = "Adaptive rate-limiting lab: queueing simulator, hybrid DQN/A3C agent, baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override: training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Override: A3C worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the hybrid agent; writes checkpoints, manifest.json and
    /// convergence.csv per seed.
    Train(CommonArgs),
    /// Evaluate one frozen policy on the configured pattern.
    Eval(EvalArgs),
    /// Evaluate every policy across periodic/burst/mixed traffic;
    /// writes compare.csv.
    Compare(CompareArgs),
    /// Train and score all ablation variants; writes ablation.csv.
    Ablate(CommonArgs),
    /// Grid-search the classic baselines; writes tuning.csv.
    TuneBaselines(CommonArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One of: hybrid, simple-dqn, fixed, cpu, aimd, pid.
    #[arg(long, default_value = "hybrid")]
    policy: String,
    /// Checkpoint directory (required for hybrid / simple-dqn).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Deterministic fusion arbitration for reproducible reports.
    #[arg(long)]
    deterministic_eval: bool,
    /// Export the per-step environment trace as trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated policies (default: all).
    #[arg(long)]
    policies: Option<String>,
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(steps) = common.steps {
        cfg.training_steps = steps;
    }
    if let Some(workers) = common.workers {
        cfg.a3c.workers = workers.max(1);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(&load(&args)?),
        Command::Eval(args) => {
            let cfg = load(&args.common)?;
            cmd_eval(&cfg, &args)
        }
        Command::Compare(args) => {
            let cfg = load(&args.common)?;
            cmd_compare(&cfg, args.policies.as_deref())
        }
        Command::Ablate(args) => cmd_ablate(&load(&args)?),
        Command::TuneBaselines(args) => cmd_tune(&load(&args)?),
    }
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    for &seed in &cfg.seeds {
        let out_dir = if cfg.seeds.len() == 1 {
            cfg.output_dir.clone()
        } else {
            cfg.output_dir.join(format!("seed_{seed}"))
        };
        let artifacts = ratelab::harness::train(cfg, seed, &out_dir)?;
        let last = artifacts.log.rows.last();
        println!(
            "seed {seed}: {} steps, {} episodes, final episode reward {:.2}, wall {:.1}s -> {}",
            artifacts.steps,
            artifacts.log.rows.len(),
            last.map(|r| r.cum_reward).unwrap_or(0.0),
            artifacts.log.wall_seconds,
            out_dir.display()
        );
    }
    Ok(())
}

fn load_hybrid(
    cfg: &ExperimentConfig,
    dir: &Path,
    deterministic: bool,
    seed: u64,
) -> Result<HybridPolicy> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .context("reading manifest.json")?;
    let (dqn, _) = checkpoint::load_mlp(&dir.join(&manifest.dqn_main))?;
    let (a3c, _) = checkpoint::load_actor_critic(&dir.join(&manifest.a3c_global))?;
    let norm = NormalizationSpec::from_parts(
        cfg.env.bounds,
        cfg.reward.tau_target_ms,
        cfg.env.queue_capacity as f64,
    )?;
    Ok(HybridPolicy::new(
        dqn,
        a3c,
        manifest.final_alpha,
        norm,
        cfg.env.bounds,
        deterministic,
        manifest.no_temporal,
        seed,
    ))
}

fn cmd_eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<()> {
    let seed = cfg.seeds[0];
    let norm = NormalizationSpec::from_parts(
        cfg.env.bounds,
        cfg.reward.tau_target_ms,
        cfg.env.queue_capacity as f64,
    )?;
    let mut policy: Box<dyn Controller> = match args.policy.as_str() {
        "hybrid" => {
            let dir = args.checkpoint.as_deref().context("--checkpoint required for hybrid")?;
            Box::new(load_hybrid(cfg, dir, args.deterministic_eval, seed)?)
        }
        "simple-dqn" => {
            let dir =
                args.checkpoint.as_deref().context("--checkpoint required for simple-dqn")?;
            let manifest: Manifest =
                serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
            let (net, _) = checkpoint::load_mlp(&dir.join(&manifest.dqn_main))?;
            Box::new(SimpleDqn::new(net, norm, cfg.env.bounds))
        }
        "fixed" => Box::new(FixedThreshold::new(
            FixedConfig { theta_fixed: cfg.env.service_capacity },
            cfg.env.bounds,
        )),
        "cpu" => Box::new(CpuProportional::new(CpuProportionalConfig::default(), cfg.env.bounds)),
        "aimd" => Box::new(Aimd::new(
            AimdConfig { tau_target_ms: cfg.reward.tau_target_ms, ..Default::default() },
            cfg.env.bounds,
        )),
        "pid" => Box::new(Pid::new(
            PidConfig { tau_target_ms: cfg.reward.tau_target_ms, ..Default::default() },
            cfg.env.bounds,
            cfg.env.step_duration_s,
        )),
        other => bail!("unknown policy {other:?}"),
    };

    std::fs::create_dir_all(&cfg.output_dir)?;
    let trace_path = cfg.output_dir.join("trace.csv");
    let trace = args.trace.then_some(trace_path.as_path());
    let report = evaluate(policy.as_mut(), cfg, cfg.pattern, seed, &cfg.constraints, trace)?;
    println!("policy:           {}", report.policy);
    println!("pattern:          {}", report.pattern);
    println!("seed:             {}", report.seed);
    println!("throughput:       {:.1} req/s", report.throughput_rps);
    println!("latency p50/p90/p99: {:.0} / {:.0} / {:.0} ms", report.p50_ms, report.p90_ms, report.p99_ms);
    println!("availability:     {:.4}", report.availability);
    println!("sla compliance:   {:.4}", report.sla_compliance);
    println!("mean cpu/mem:     {:.3} / {:.3}", report.mean_cpu, report.mean_mem);
    println!(
        "violations (lat/err/res): {:.3} / {:.3} / {:.3}",
        report.violation_latency, report.violation_error, report.violation_resource
    );
    println!("mean reward:      {:.4}", report.mean_reward);
    if report.degenerate {
        println!("warning: degenerate run (no traffic)");
    }
    std::fs::write(
        cfg.output_dir.join("eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if args.trace {
        println!("trace written to {}", trace_path.display());
    }
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig, policies: Option<&str>) -> Result<()> {
    let kinds: Vec<PolicyKind> = match policies {
        None => PolicyKind::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|s| PolicyKind::parse(s.trim()).with_context(|| format!("unknown policy {s:?}")))
            .collect::<Result<_>>()?,
    };
    let patterns = [TrafficKind::Periodic, TrafficKind::Burst, TrafficKind::Mixed];
    let out = compare(cfg, &kinds, &patterns)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("compare.csv");
    write_compare_csv(&out, &path)?;
    println!("{:<14} {:<9} {:>12} {:>10} {:>8} {:>8}", "policy", "pattern", "throughput", "p99_ms", "d_thr%", "d_p99%");
    for m in &out.means {
        println!(
            "{:<14} {:<9} {:>12.1} {:>10.0} {:>8} {:>8}",
            m.policy,
            m.pattern,
            m.throughput_rps,
            m.p99_ms,
            m.delta_throughput_pct.map(|v| format!("{v:+.1}")).unwrap_or_default(),
            m.delta_p99_pct.map(|v| format!("{v:+.1}")).unwrap_or_default(),
        );
    }
    println!("rows written to {}", path.display());
    Ok(())
}

fn cmd_ablate(cfg: &ExperimentConfig) -> Result<()> {
    let (rows, summaries) = ablate(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("ablation.csv");
    write_ablation_csv(&rows, &summaries, &path)?;
    println!("{:<16} {:>12} {:>12}", "variant", "composite", "% of full");
    for s in &summaries {
        println!("{:<16} {:>12.4} {:>12.1}", s.variant, s.mean_composite, s.pct_of_full);
    }
    println!("rows written to {}", path.display());
    Ok(())
}

fn cmd_tune(cfg: &ExperimentConfig) -> Result<()> {
    let patterns = [TrafficKind::Periodic, TrafficKind::Burst, TrafficKind::Mixed];
    let (rows, tuned) = tune_baselines(cfg, &patterns)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("tuning.csv");
    write_tuning_csv(&rows, &path)?;
    for (pattern, set) in &tuned {
        println!("{pattern}:");
        println!("  fixed: theta_fixed={}", set.fixed.theta_fixed);
        println!("  cpu:   gain={}, setpoint={}", set.cpu.gain, set.cpu.setpoint);
        println!(
            "  aimd:  additive_step={}, decrease_factor={}",
            set.aimd.additive_step, set.aimd.decrease_factor
        );
        println!("  pid:   kp={}, ki={}, kd={}", set.pid.kp, set.pid.ki, set.pid.kd);
    }
    println!("sweep written to {}", path.display());
    Ok(())
}
