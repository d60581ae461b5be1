//! Evaluation metrics: nearest-rank percentiles, the per-run report,
//! and the monitored (never enforced) constraint set.

use serde::{Deserialize, Serialize};

/// Nearest-rank percentile: the ceil(p·N)-th order statistic.
/// `None` for an empty sample set.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    assert!(p > 0.0 && p <= 1.0, "percentile fraction {p} outside (0, 1]");
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("latency samples must not be NaN"));
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.max(1) - 1])
}

/// Operating constraints that evaluation reports violation rates for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConstraints {
    /// Hard latency ceiling, milliseconds.
    pub tau_max_ms: f64,
    /// Tolerated probability of exceeding the ceiling.
    pub delta_latency: f64,
    /// Tolerated mean error rate.
    pub delta_error: f64,
    /// Resource utilization ceiling for max(cpu, mem).
    pub rho_max: f64,
}

impl Default for EvalConstraints {
    fn default() -> Self {
        Self { tau_max_ms: 1000.0, delta_latency: 0.01, delta_error: 0.01, rho_max: 0.9 }
    }
}

impl EvalConstraints {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_max_ms > 0.0 && self.rho_max > 0.0) {
            return Err("constraint ceilings must be positive".into());
        }
        for d in [self.delta_latency, self.delta_error] {
            if !(0.0..1.0).contains(&d) || d == 0.0 {
                return Err(format!("constraint tolerance {d} must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Aggregated metrics of one frozen-policy evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub pattern: String,
    pub seed: u64,
    /// Successfully served requests per second.
    pub throughput_rps: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    /// Served / offered over the whole run.
    pub availability: f64,
    /// Fraction of latency samples within the SLA target.
    pub sla_compliance: f64,
    pub mean_cpu: f64,
    pub mean_mem: f64,
    /// Fraction of steps whose smoothed latency exceeded tau_max.
    pub violation_latency: f64,
    /// Fraction of steps whose error rate exceeded delta_error.
    pub violation_error: f64,
    /// Fraction of steps with max(cpu, mem) above rho_max.
    pub violation_resource: f64,
    /// Mean per-step composite reward (the tuning/ablation score).
    pub mean_reward: f64,
    /// Set when the run saw no offered traffic (metrics meaningless).
    pub degenerate: bool,
}
