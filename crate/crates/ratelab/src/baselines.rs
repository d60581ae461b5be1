//! Comparison controllers: fixed threshold, CPU-proportional, AIMD,
//! PID on latency, and a fusion-disabled DQN. All expose the same
//! decide(state) → next-threshold interface as the learned agent.

use serde::{Deserialize, Serialize};

use crate::agents::dqn::argmax;
use crate::nn::Mlp;
use crate::state::{
    apply_action, encode_state, Action, NormalizationSpec, SystemState, ThresholdBounds,
};

/// A threshold controller; owns whatever memory it needs.
pub trait Controller {
    /// Next threshold to apply, already clamped to bounds.
    fn decide(&mut self, state: &SystemState) -> f64;
    /// Clear controller memory between evaluation runs.
    fn reset(&mut self);
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedConfig {
    pub theta_fixed: f64,
}

impl Default for FixedConfig {
    fn default() -> Self {
        // capacity-planning reading: limit set to nominal capacity
        Self { theta_fixed: 1000.0 }
    }
}

/// Static limit from capacity planning; ignores the state entirely.
#[derive(Debug, Clone)]
pub struct FixedThreshold {
    pub cfg: FixedConfig,
    pub bounds: ThresholdBounds,
}

impl FixedThreshold {
    pub fn new(cfg: FixedConfig, bounds: ThresholdBounds) -> Self {
        Self { cfg, bounds }
    }
}

impl Controller for FixedThreshold {
    fn decide(&mut self, _state: &SystemState) -> f64 {
        self.bounds.clamp(self.cfg.theta_fixed)
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "fixed"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpuProportionalConfig {
    pub gain: f64,
    pub setpoint: f64,
}

impl Default for CpuProportionalConfig {
    fn default() -> Self {
        Self { gain: 0.5, setpoint: 0.7 }
    }
}

/// Scales the threshold in proportion to the CPU setpoint error.
#[derive(Debug, Clone)]
pub struct CpuProportional {
    pub cfg: CpuProportionalConfig,
    pub bounds: ThresholdBounds,
}

impl CpuProportional {
    pub fn new(cfg: CpuProportionalConfig, bounds: ThresholdBounds) -> Self {
        Self { cfg, bounds }
    }
}

impl Controller for CpuProportional {
    fn decide(&mut self, state: &SystemState) -> f64 {
        let error = self.cfg.setpoint - state.cpu_util;
        self.bounds.clamp(state.threshold * (1.0 + self.cfg.gain * error))
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "cpu"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AimdConfig {
    /// Additive raise per uncongested step, requests/second.
    pub additive_step: f64,
    /// Multiplicative cut on congestion, in (0, 1).
    pub decrease_factor: f64,
    /// Congestion when latency exceeds this target...
    pub tau_target_ms: f64,
    /// ...or the error rate exceeds this fraction.
    pub error_threshold: f64,
}

impl Default for AimdConfig {
    fn default() -> Self {
        Self {
            additive_step: 50.0,
            decrease_factor: 0.5,
            tau_target_ms: 500.0,
            error_threshold: 0.01,
        }
    }
}

/// Additive-increase / multiplicative-decrease on a latency-or-errors
/// congestion signal; produces the classic sawtooth.
#[derive(Debug, Clone)]
pub struct Aimd {
    pub cfg: AimdConfig,
    pub bounds: ThresholdBounds,
}

impl Aimd {
    pub fn new(cfg: AimdConfig, bounds: ThresholdBounds) -> Self {
        assert!(
            cfg.decrease_factor > 0.0 && cfg.decrease_factor < 1.0,
            "decrease factor must lie in (0, 1)"
        );
        Self { cfg, bounds }
    }

    pub fn congested(&self, state: &SystemState) -> bool {
        state.avg_latency_ms > self.cfg.tau_target_ms
            || state.error_rate > self.cfg.error_threshold
    }

    /// Core update, callable with an explicit congestion flag.
    pub fn step_threshold(&self, theta: f64, congested: bool) -> f64 {
        let next = if congested {
            theta * self.cfg.decrease_factor
        } else {
            theta + self.cfg.additive_step
        };
        self.bounds.clamp(next)
    }
}

impl Controller for Aimd {
    fn decide(&mut self, state: &SystemState) -> f64 {
        self.step_threshold(state.threshold, self.congested(state))
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "aimd"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidConfig {
    /// Gains in requests/second per millisecond of latency error.
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub tau_target_ms: f64,
    /// Anti-windup clamp on the integral term, ms·s.
    pub integral_clamp: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { kp: 1.0, ki: 0.1, kd: 0.05, tau_target_ms: 500.0, integral_clamp: 10_000.0 }
    }
}

/// PID feedback on latency: the threshold moves by the controller
/// output each step.
#[derive(Debug, Clone)]
pub struct Pid {
    pub cfg: PidConfig,
    pub bounds: ThresholdBounds,
    /// Step length for the integral/derivative terms, seconds.
    pub dt_s: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(cfg: PidConfig, bounds: ThresholdBounds, dt_s: f64) -> Self {
        assert!(dt_s > 0.0);
        Self { cfg, bounds, dt_s, integral: 0.0, prev_error: None }
    }
}

impl Controller for Pid {
    fn decide(&mut self, state: &SystemState) -> f64 {
        let error = self.cfg.tau_target_ms - state.avg_latency_ms;
        self.integral = (self.integral + error * self.dt_s)
            .clamp(-self.cfg.integral_clamp, self.cfg.integral_clamp);
        let derivative = match self.prev_error {
            Some(prev) => (error - prev) / self.dt_s,
            None => 0.0, // no derivative kick on the first sample
        };
        self.prev_error = Some(error);
        let u = self.cfg.kp * error + self.cfg.ki * self.integral + self.cfg.kd * derivative;
        self.bounds.clamp(state.threshold + u)
    }

    fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    fn name(&self) -> &'static str {
        "pid"
    }
}

/// Greedy policy of a trained Q-network with fusion disabled — the
/// plain-DQN comparison point.
#[derive(Debug, Clone)]
pub struct SimpleDqn {
    pub net: Mlp,
    pub norm: NormalizationSpec,
    pub bounds: ThresholdBounds,
}

impl SimpleDqn {
    pub fn new(net: Mlp, norm: NormalizationSpec, bounds: ThresholdBounds) -> Self {
        Self { net, norm, bounds }
    }
}

impl Controller for SimpleDqn {
    fn decide(&mut self, state: &SystemState) -> f64 {
        let encoded = encode_state(state, &self.norm);
        let action_idx = argmax(&self.net.forward(&encoded));
        let action =
            Action::from_index(action_idx).expect("net output width is the action count");
        apply_action(state.threshold, action, &self.bounds)
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "simple-dqn"
    }
}
