//! Experiment orchestration: configuration, the training/evaluation loop,
//! metrics, CSV output, checkpoints and sweeps.

pub mod metrics;
pub mod run;
pub mod sweep;
pub mod tabular;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::pessimism::PessimismConfig;

pub use metrics::{
    approx_error_from_rollout, approx_error_metric, overfit_metric, overfit_ratio, read_metrics, write_metrics, MetricsRow, MetricsWriter,
    METRICS_HEADER,
};
pub use run::{evaluate, evaluate_checkpoint, evaluate_collect, run_experiment, CHECKPOINT_FILE, METRICS_FILE};
pub use sweep::{bootstrap_ci, final_performance, sweep, sweep_arms, SummaryRow, SweepAxis};

pub const PENDULUM_DEFAULT_STEPS: usize = 50_000;
pub const TABULAR_DEFAULT_STEPS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Starting states for the approximation-error estimate.
    pub approx_starts: usize,
    pub approx_rollout_len: usize,
    /// Batch size of the overfitting ratio; defaults to the agent batch size.
    pub batch_size: Option<usize>,
    /// Use signed instead of squared TD errors in the overfitting ratio.
    pub signed_overfit: bool,
    /// Fill `wall_ms`; off by default so CSVs stay byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            approx_starts: 5,
            approx_rollout_len: 200,
            batch_size: None,
            signed_overfit: false,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub pessimism: PessimismConfig,
    pub agent: AgentConfig,
    /// Defaults to 50,000 on the pendulum and 20,000 on tabular MDPs.
    pub total_steps: Option<usize>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub validation_ratio: f64,
    /// Full-parameter reset cadence in environment steps; 0 disables.
    pub reset_every: usize,
    pub seed: u64,
    /// Output directory for `metrics.csv` and `checkpoint.bin`.
    pub output: Option<PathBuf>,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            pessimism: PessimismConfig::default(),
            agent: AgentConfig::default(),
            total_steps: None,
            eval_every: 1000,
            eval_episodes: 5,
            validation_ratio: 0.0,
            reset_every: 0,
            seed: 0,
            output: None,
            metrics: MetricsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps.unwrap_or(match self.env {
            EnvConfig::Pendulum { .. } => PENDULUM_DEFAULT_STEPS,
            EnvConfig::Tabular { .. } => TABULAR_DEFAULT_STEPS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.eval_every == 0 || self.total_steps() % self.eval_every != 0 {
            return cfg_err(format!(
                "eval_every {} must divide total_steps {}",
                self.eval_every,
                self.total_steps()
            ));
        }
        if self.eval_episodes == 0 {
            return cfg_err("eval_episodes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_ratio) {
            return cfg_err(format!("validation_ratio {} outside [0, 1)", self.validation_ratio));
        }
        if self.metrics.approx_starts == 0 || self.metrics.approx_rollout_len == 0 || self.metrics.batch_size == Some(0) {
            return cfg_err("metric sizes must be positive".into());
        }
        self.agent.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.pessimism.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.env.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Desk-scale reset cadence: 16% of the step budget.
    pub fn scaled_reset_every(total_steps: usize) -> usize {
        total_steps * 16 / 100
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_steps(), PENDULUM_DEFAULT_STEPS);
    }

    #[test]
    fn eval_cadence_must_divide_budget() {
        let c = ExperimentConfig {
            total_steps: Some(1500),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_unknown_keys_are_errors() {
        assert!(ExperimentConfig::from_json(r#"{"total_steps":1000,"mystery":1}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"env":{"kind":"tabular","n_states":4,"n_actions":2},"eval_every":500}"#).unwrap();
        assert_eq!(c.total_steps(), TABULAR_DEFAULT_STEPS);
    }
}
