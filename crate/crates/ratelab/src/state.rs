//! Observable system state, the discrete action space, threshold
//! arithmetic, and metric preprocessing (min-max scaling, EWMA
//! smoothing, cyclic time-of-day encoding).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the encoded observation vector fed to the networks:
/// `[rate, cpu, mem, threshold, latency, queue, errors, sin, cos]`.
pub const STATE_DIM: usize = 9;

/// Number of discrete threshold-adjustment actions.
pub const ACTION_COUNT: usize = 7;

/// Relative threshold changes, ordered by action index.
pub const ACTION_MULTIPLIERS: [f64; ACTION_COUNT] = [-0.50, -0.20, -0.10, 0.0, 0.10, 0.20, 0.50];

/// Index of the no-op (0%) action.
pub const NOOP_ACTION: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("hour of day {0} outside [0, 24)")]
    HourOutOfRange(f64),
    #[error("EWMA decay {0} outside [0, 1)")]
    InvalidDecay(f64),
    #[error("invalid threshold bounds: min {min}, max {max}")]
    InvalidBounds { min: f64, max: f64 },
    #[error("feature bounds must satisfy min < max (got {min}..{max})")]
    InvalidFeatureBounds { min: f64, max: f64 },
}

/// One discrete rate-limit adjustment: a percentage change applied to
/// the current threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action(usize);

impl Action {
    pub fn from_index(index: usize) -> Option<Action> {
        (index < ACTION_COUNT).then_some(Action(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn multiplier(self) -> f64 {
        ACTION_MULTIPLIERS[self.0]
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..ACTION_COUNT).map(Action)
    }
}

/// Legal range for the rate-limit threshold (requests/second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ThresholdBounds {
    fn default() -> Self {
        Self { min: 100.0, max: 20_000.0 }
    }
}

impl ThresholdBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, StateError> {
        if !(min > 0.0 && min < max && max.is_finite()) {
            return Err(StateError::InvalidBounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn clamp(&self, theta: f64) -> f64 {
        theta.clamp(self.min, self.max)
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.min && theta <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// Raw observation of the limited service at one decision step.
///
/// `temporal` is the sin/cos encoding of the simulated hour of day;
/// it rides along as a pair so the encoded vector keeps circular
/// continuity across midnight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    /// Smoothed arrival rate at the limiter, requests/second.
    pub request_rate: f64,
    /// CPU utilization fraction in [0, 1].
    pub cpu_util: f64,
    /// Memory utilization fraction in [0, 1].
    pub mem_util: f64,
    /// Currently applied rate-limit threshold, requests/second.
    pub threshold: f64,
    /// Smoothed mean response time, milliseconds.
    pub avg_latency_ms: f64,
    /// Backlog of admitted-but-unserved requests.
    pub queue_len: f64,
    /// Per-step error fraction in [0, 1].
    pub error_rate: f64,
    /// `[sin, cos]` of the simulated hour of day.
    pub temporal: [f64; 2],
    /// Discrete decision-step index.
    pub step: u64,
}

/// Min-max bounds for one scaled feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBounds {
    pub min: f64,
    pub max: f64,
}

impl FeatureBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, StateError> {
        if !(min < max) {
            return Err(StateError::InvalidFeatureBounds { min, max });
        }
        Ok(Self { min, max })
    }

    /// Scale into [0, 1], clipping values outside the configured range.
    pub fn scale(&self, value: f64) -> f64 {
        ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Scaling spec for the encoder plus the monitoring EWMA decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub request_rate: FeatureBounds,
    pub threshold: FeatureBounds,
    pub latency_ms: FeatureBounds,
    pub queue_len: FeatureBounds,
    /// Decay factor for metric smoothing, default 0.9.
    pub ewma_decay: f64,
}

impl NormalizationSpec {
    /// Derive encoder bounds from the experiment configuration:
    /// rate in [0, 2·θ_max], latency in [0, 4·τ_target],
    /// queue in [0, queue_capacity].
    pub fn from_parts(
        bounds: ThresholdBounds,
        tau_target_ms: f64,
        queue_capacity: f64,
    ) -> Result<Self, StateError> {
        Ok(Self {
            request_rate: FeatureBounds::new(0.0, 2.0 * bounds.max)?,
            threshold: FeatureBounds::new(bounds.min, bounds.max)?,
            latency_ms: FeatureBounds::new(0.0, 4.0 * tau_target_ms)?,
            queue_len: FeatureBounds::new(0.0, queue_capacity)?,
            ewma_decay: 0.9,
        })
    }
}

/// Cyclic encoding of the hour of day: `[sin(2πh/24), cos(2πh/24)]`.
pub fn temporal_features(hour_of_day: f64) -> Result<[f64; 2], StateError> {
    if !(0.0..24.0).contains(&hour_of_day) {
        return Err(StateError::HourOutOfRange(hour_of_day));
    }
    let phase = 2.0 * std::f64::consts::PI * hour_of_day / 24.0;
    Ok([phase.sin(), phase.cos()])
}

/// One EWMA step: `decay·prev + (1−decay)·current`.
pub fn ewma_smooth(prev: f64, current: f64, decay: f64) -> Result<f64, StateError> {
    if !(0.0..1.0).contains(&decay) {
        return Err(StateError::InvalidDecay(decay));
    }
    Ok(decay * prev + (1.0 - decay) * current)
}

/// Encode a raw state into the fixed 9-component network input.
///
/// Scaled features clip to [0, 1] rather than erroring; live metrics
/// can transiently exceed configured ranges.
pub fn encode_state(raw: &SystemState, spec: &NormalizationSpec) -> [f64; STATE_DIM] {
    [
        spec.request_rate.scale(raw.request_rate),
        raw.cpu_util.clamp(0.0, 1.0),
        raw.mem_util.clamp(0.0, 1.0),
        spec.threshold.scale(raw.threshold),
        spec.latency_ms.scale(raw.avg_latency_ms),
        spec.queue_len.scale(raw.queue_len),
        raw.error_rate.clamp(0.0, 1.0),
        raw.temporal[0],
        raw.temporal[1],
    ]
}

/// Apply a relative threshold adjustment, clamped to the legal range.
pub fn apply_action(theta: f64, action: Action, bounds: &ThresholdBounds) -> f64 {
    bounds.clamp(theta * (1.0 + action.multiplier()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn temporal_features_hits_cardinal_points() {
        let eps = 1e-12;
        let f0 = temporal_features(0.0).unwrap();
        assert!((f0[0] - 0.0).abs() < eps && (f0[1] - 1.0).abs() < eps);
        let f6 = temporal_features(6.0).unwrap();
        assert!((f6[0] - 1.0).abs() < eps && f6[1].abs() < eps);
        let f12 = temporal_features(12.0).unwrap();
        assert!(f12[0].abs() < eps && (f12[1] + 1.0).abs() < eps);
    }

    #[test]
    fn temporal_features_rejects_out_of_range() {
        assert!(matches!(temporal_features(24.0), Err(StateError::HourOutOfRange(_))));
        assert!(matches!(temporal_features(-0.1), Err(StateError::HourOutOfRange(_))));
    }

    #[test]
    fn ewma_fixed_point_and_passthrough() {
        assert_eq!(ewma_smooth(10.0, 10.0, 0.9).unwrap(), 10.0);
        assert!((ewma_smooth(0.0, 10.0, 0.9).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ewma_smooth(5.0, 15.0, 0.0).unwrap(), 15.0);
        assert!(ewma_smooth(1.0, 2.0, 1.0).is_err());
        assert!(ewma_smooth(1.0, 2.0, -0.1).is_err());
    }

    #[test]
    fn action_table_matches_spec_order() {
        let expected = [-0.50, -0.20, -0.10, 0.0, 0.10, 0.20, 0.50];
        for (i, want) in expected.iter().enumerate() {
            assert_eq!(Action::from_index(i).unwrap().multiplier(), *want);
        }
        assert_eq!(Action::from_index(NOOP_ACTION).unwrap().multiplier(), 0.0);
        assert!(Action::from_index(7).is_none());
    }

    #[test]
    fn apply_action_examples() {
        let bounds = ThresholdBounds::new(100.0, 10_000.0).unwrap();
        let up = Action::from_index(4).unwrap(); // +10%
        assert!((apply_action(1000.0, up, &bounds) - 1100.0).abs() < 1e-9);
        let hold = Action::from_index(NOOP_ACTION).unwrap();
        assert_eq!(apply_action(1000.0, hold, &bounds), 1000.0);
        let cut = Action::from_index(0).unwrap(); // -50%
        assert_eq!(apply_action(150.0, cut, &bounds), 100.0); // 75 clamps to min
    }

    fn default_spec() -> NormalizationSpec {
        NormalizationSpec::from_parts(ThresholdBounds::default(), 500.0, 2000.0).unwrap()
    }

    fn state_at(rate: f64, theta: f64, lat: f64, queue: f64) -> SystemState {
        SystemState {
            request_rate: rate,
            cpu_util: 0.0,
            mem_util: 0.0,
            threshold: theta,
            avg_latency_ms: lat,
            queue_len: queue,
            error_rate: 0.0,
            temporal: temporal_features(0.0).unwrap(),
            step: 0,
        }
    }

    #[test]
    fn encode_state_minimum_maps_to_zero() {
        let spec = default_spec();
        let raw = state_at(0.0, 100.0, 0.0, 0.0);
        let v = encode_state(&raw, &spec);
        for x in &v[..7] {
            assert_eq!(*x, 0.0);
        }
        assert_eq!(v[7], raw.temporal[0]);
        assert_eq!(v[8], raw.temporal[1]);
    }

    #[test]
    fn encode_state_maximum_maps_to_one() {
        let spec = default_spec();
        let mut raw = state_at(40_000.0, 20_000.0, 2000.0, 2000.0);
        raw.cpu_util = 1.0;
        raw.mem_util = 1.0;
        raw.error_rate = 1.0;
        let v = encode_state(&raw, &spec);
        for x in &v[..7] {
            assert_eq!(*x, 1.0);
        }
    }

    #[test]
    fn encode_state_midpoint_rate() {
        let spec = default_spec();
        let raw = state_at(20_000.0, 100.0, 0.0, 0.0);
        assert!((encode_state(&raw, &spec)[0] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn apply_action_monotone_and_bounded(
            theta in 1.0f64..50_000.0,
            lo in 1.0f64..500.0,
            span in 1.0f64..50_000.0,
        ) {
            let bounds = ThresholdBounds::new(lo, lo + span).unwrap();
            let theta = bounds.clamp(theta);
            let mut prev = f64::NEG_INFINITY;
            for a in Action::all() {
                let next = apply_action(theta, a, &bounds);
                prop_assert!(bounds.contains(next));
                prop_assert!(next >= prev);
                prev = next;
            }
        }

        #[test]
        fn ewma_stays_between_endpoints(
            prev in -1e6f64..1e6,
            current in -1e6f64..1e6,
            decay in 0.0f64..0.999,
        ) {
            let out = ewma_smooth(prev, current, decay).unwrap();
            let (lo, hi) = if prev <= current { (prev, current) } else { (current, prev) };
            prop_assert!(out >= lo - 1e-9 && out <= hi + 1e-9);
        }

        #[test]
        fn encode_state_components_bounded(
            rate in -1e5f64..1e5,
            cpu in -0.5f64..1.5,
            mem in -0.5f64..1.5,
            theta in -1e5f64..1e5,
            lat in -1e4f64..1e5,
            queue in -10.0f64..1e5,
            err in -0.5f64..1.5,
            hour in 0.0f64..23.999,
        ) {
            let spec = default_spec();
            let raw = SystemState {
                request_rate: rate,
                cpu_util: cpu,
                mem_util: mem,
                threshold: theta,
                avg_latency_ms: lat,
                queue_len: queue,
                error_rate: err,
                temporal: temporal_features(hour).unwrap(),
                step: 0,
            };
            let v = encode_state(&raw, &spec);
            for x in v {
                prop_assert!((-1.0..=1.0).contains(&x));
            }
            // pure function: same input, same output
            prop_assert_eq!(encode_state(&raw, &spec), v);
        }
    }

    #[test]
    fn temporal_pair_on_unit_circle() {
        for h in 0..240 {
            let f = temporal_features(h as f64 / 10.0).unwrap();
            assert!((f[0] * f[0] + f[1] * f[1] - 1.0).abs() < 1e-9);
        }
    }
}
