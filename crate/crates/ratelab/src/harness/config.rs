//! Experiment configuration: a TOML file whose sections and keys
//! mirror the config structs exactly. Unknown keys are hard errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{A3cConfig, DqnConfig, FusionSchedule};
use crate::reward::RewardConfig;
use crate::sim::{EnvConfig, TrafficPattern};

use super::metrics::EvalConstraints;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which training components an ablation run disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Online single-transition updates instead of replay sampling.
    pub no_replay: bool,
    /// TD targets from the main net instead of the target copy.
    pub no_target_net: bool,
    /// Pure DQN: fusion weight pinned to 1, no actor-critic updates.
    pub no_a3c: bool,
    /// Zero out the time-of-day features in every observation.
    pub no_temporal: bool,
}

impl AblationFlags {
    pub const VARIANTS: [&'static str; 5] =
        ["full", "no_replay", "no_target_net", "no_a3c", "no_temporal"];

    pub fn variant(name: &str) -> Option<AblationFlags> {
        let mut f = AblationFlags::default();
        match name {
            "full" => {}
            "no_replay" => f.no_replay = true,
            "no_target_net" => f.no_target_net = true,
            "no_a3c" => f.no_a3c = true,
            "no_temporal" => f.no_temporal = true,
            _ => return None,
        }
        Some(f)
    }
}

/// Everything one experiment needs; all fields have working defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub pattern: TrafficPattern,
    pub reward: RewardConfig,
    pub dqn: DqnConfig,
    pub a3c: A3cConfig,
    pub fusion: FusionSchedule,
    pub constraints: EvalConstraints,
    pub ablation: AblationFlags,
    /// Environment interactions per training run (desk-scale default;
    /// the paper-scale 100,000 is one `--steps` flag away).
    pub training_steps: u64,
    /// Fixed episode length in steps.
    pub episode_horizon: u64,
    /// Frozen-policy evaluation length in steps.
    pub eval_duration: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Minimum simulated seconds between applied threshold changes;
    /// 0 disables the guard.
    pub min_update_interval_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            pattern: TrafficPattern::default(),
            reward: RewardConfig::default(),
            dqn: DqnConfig::default(),
            a3c: A3cConfig::default(),
            fusion: FusionSchedule::default(),
            constraints: EvalConstraints::default(),
            ablation: AblationFlags::default(),
            training_steps: 20_000,
            episode_horizon: 500,
            eval_duration: 300,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("out"),
            min_update_interval_s: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pattern.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.reward.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.training_steps < self.episode_horizon {
            return Err(ConfigError::Invalid(format!(
                "training_steps {} below episode_horizon {}",
                self.training_steps, self.episode_horizon
            )));
        }
        if self.episode_horizon == 0 {
            return Err(ConfigError::Invalid("episode_horizon must be positive".into()));
        }
        if self.eval_duration == 0 {
            return Err(ConfigError::Invalid("eval_duration must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if !(self.dqn.lr > 0.0) || self.dqn.batch_size == 0 {
            return Err(ConfigError::Invalid("dqn learning rate/batch invalid".into()));
        }
        if !(self.dqn.epsilon_min > 0.0
            && self.dqn.epsilon_min <= self.dqn.epsilon_start
            && self.dqn.epsilon_start <= 1.0)
        {
            return Err(ConfigError::Invalid("epsilon schedule must satisfy 0 < min <= start <= 1".into()));
        }
        if !(self.a3c.lr > 0.0) || self.a3c.workers == 0 || self.a3c.n_step == 0 {
            return Err(ConfigError::Invalid("a3c lr/workers/n_step invalid".into()));
        }
        if !self.fusion.validate() {
            return Err(ConfigError::Invalid(
                "fusion schedule must satisfy 0 <= start <= end <= 1".into(),
            ));
        }
        if self.min_update_interval_s < 0.0 {
            return Err(ConfigError::Invalid("min_update_interval_s must be >= 0".into()));
        }
        self.constraints.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Fusion schedule with a zero horizon resolved to the training
    /// length.
    pub fn resolved_fusion(&self) -> FusionSchedule {
        let mut f = self.fusion;
        if f.total_steps == 0 {
            f.total_steps = self.training_steps;
        }
        f
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "training_steps = 1000\nepisod_horizon = 500\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("episod_horizon"), "{err}");

        let nested = "[env]\nservice_capacty = 100.0\n";
        assert!(toml::from_str::<ExperimentConfig>(nested).is_err());
    }

    #[test]
    fn partial_files_take_defaults() {
        let text = "training_steps = 5000\n[pattern]\nkind = \"burst\"\nbase_rate = 700.0\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.training_steps, 5000);
        assert_eq!(cfg.pattern.base_rate, 700.0);
        assert_eq!(cfg.episode_horizon, 500);
        assert_eq!(cfg.dqn.batch_size, 64);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.training_steps = 10; // below horizon
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.reward.w_throughput = 0.9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablation_variants_resolve() {
        assert_eq!(AblationFlags::variant("full"), Some(AblationFlags::default()));
        let f = AblationFlags::variant("no_replay").unwrap();
        assert!(f.no_replay && !f.no_a3c);
        assert!(AblationFlags::variant("bogus").is_none());
    }

    #[test]
    fn fusion_horizon_resolves_to_training_steps() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.resolved_fusion().total_steps, cfg.training_steps);
        let mut cfg = ExperimentConfig::default();
        cfg.fusion.total_steps = 777;
        assert_eq!(cfg.resolved_fusion().total_steps, 777);
    }
}
