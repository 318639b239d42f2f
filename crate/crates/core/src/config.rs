//! Engine configuration.
//!
//! Defaults are the reference operating point: 2 candidates, 2 streams
//! (efficiency + thoroughness), strategic promotion at 0.85, auto-accept at
//! 0.5, 10 guidelines per domain optimizing down to 8 in at most 2 passes,
//! 20 tactical guidelines per task, and every successful step analyzed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::PlacementStrategy;
use crate::gateway::ProviderKind;
use crate::memory::OptimizerLimits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Candidate guidelines generated per trigger (best-of-N).
    pub n_candidates: usize,
    /// Parallel perspective streams.
    pub k_streams: usize,
    /// Minimum confidence for strategic promotion.
    pub c_thresh: f64,
    /// Minimum confidence to apply a guideline at all.
    pub accept_thresh: f64,
    /// Bucket size that triggers optimization when exceeded.
    pub per_domain_cap: usize,
    /// Bucket size the optimizer aims for (80% of the cap).
    pub target_after_opt: usize,
    pub max_opt_iterations: usize,
    /// Limit on tactical guidelines per task.
    pub tactical_cap: usize,
    /// Analyze every N successful steps.
    pub enhancement_frequency: u32,
    pub placement: PlacementStrategy,
    pub provider: ProviderKind,
    pub memory_root: PathBuf,
    /// Independent runs per task, OR-aggregated.
    pub runs_per_task: usize,
    /// Master switch for the evolution loop; off means the agent runs with
    /// its static prompt and nothing is synthesized.
    pub evolution_enabled: bool,
    /// When set, each episode's trace is written here as NDJSON.
    pub trace_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            n_candidates: 2,
            k_streams: 2,
            c_thresh: 0.85,
            accept_thresh: 0.5,
            per_domain_cap: 10,
            target_after_opt: 8,
            max_opt_iterations: 2,
            tactical_cap: 20,
            enhancement_frequency: 1,
            placement: PlacementStrategy::SystemAll,
            provider: ProviderKind::Scripted {
                fixtures_dir: PathBuf::from("fixtures"),
            },
            memory_root: PathBuf::from("memory"),
            runs_per_task: 1,
            evolution_enabled: true,
            trace_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn optimizer_limits(&self) -> OptimizerLimits {
        OptimizerLimits {
            per_domain_cap: self.per_domain_cap,
            target_after_opt: self.target_after_opt,
            max_iterations: self.max_opt_iterations,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("c_thresh", self.c_thresh)?;
        unit("accept_thresh", self.accept_thresh)?;
        if self.accept_thresh > self.c_thresh {
            return Err(ConfigError::Invalid(format!(
                "accept_thresh ({}) must not exceed c_thresh ({})",
                self.accept_thresh, self.c_thresh
            )));
        }
        let positive = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be ≥ 1")))
            }
        };
        positive("n_candidates", self.n_candidates)?;
        positive("k_streams", self.k_streams)?;
        positive("per_domain_cap", self.per_domain_cap)?;
        positive("target_after_opt", self.target_after_opt)?;
        positive("max_opt_iterations", self.max_opt_iterations)?;
        positive("tactical_cap", self.tactical_cap)?;
        positive("runs_per_task", self.runs_per_task)?;
        if self.enhancement_frequency == 0 {
            return Err(ConfigError::Invalid("enhancement_frequency must be ≥ 1".to_string()));
        }
        if self.target_after_opt > self.per_domain_cap {
            return Err(ConfigError::Invalid(format!(
                "target_after_opt ({}) must not exceed per_domain_cap ({})",
                self.target_after_opt, self.per_domain_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let config = EngineConfig::default();
        assert_eq!(config.n_candidates, 2);
        assert_eq!(config.k_streams, 2);
        assert_eq!(config.c_thresh, 0.85);
        assert_eq!(config.accept_thresh, 0.5);
        assert_eq!(config.per_domain_cap, 10);
        assert_eq!(config.target_after_opt, 8);
        assert_eq!(config.max_opt_iterations, 2);
        assert_eq!(config.tactical_cap, 20);
        assert_eq!(config.enhancement_frequency, 1);
        assert_eq!(config.placement, PlacementStrategy::SystemAll);
        assert_eq!(config.runs_per_task, 1);
        assert!(config.evolution_enabled);
        config.validate().unwrap();
    }

    #[test]
    fn thresholds_must_be_ordered_and_in_range() {
        let mut config = EngineConfig {
            accept_thresh: 0.9,
            ..EngineConfig::default()
        };
        assert!(config.validate().is_err());
        config.accept_thresh = 1.5;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = EngineConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: EngineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_json_files_inherit_defaults() {
        let parsed: EngineConfig = serde_json::from_str(r#"{"k_streams": 1, "c_thresh": 0.9}"#).unwrap();
        assert_eq!(parsed.k_streams, 1);
        assert_eq!(parsed.c_thresh, 0.9);
        assert_eq!(parsed.n_candidates, 2);
    }
}
