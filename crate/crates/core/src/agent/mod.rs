//! MaxEnt actor-critic with lower-bound targets, replay/validation buffers and
//! the per-step training loop.

pub mod buffer;
pub mod sac;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::nn::Activation;

pub use buffer::{route_transition, validation_batch_size, Batch, Destination, ReplayBuffer, Transition, ValidationBuffer};
pub use sac::{
    actor_loss_and_grad, actor_update, compute_targets, critic_loss_and_grads, critic_update, frozen_batch, temperature_gradient,
    temperature_update, update_targets, Agent, CriticReport, TemperatureState,
};
pub use trainer::{StepReport, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePhase {
    Critic,
    Actor,
    Temperature,
    Pessimism,
}

pub const DEFAULT_UPDATE_ORDER: [UpdatePhase; 4] = [
    UpdatePhase::Critic,
    UpdatePhase::Actor,
    UpdatePhase::Temperature,
    UpdatePhase::Pessimism,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_ratio: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Defaults to `−dim(A)/2`.
    pub target_entropy: Option<f64>,
    pub ensemble_size: usize,
    pub initial_random_steps: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    /// Defaults to the run's total step budget.
    pub buffer_capacity: Option<usize>,
    pub update_order: Vec<UpdatePhase>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 256,
            replay_ratio: 2,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 1.0,
            target_entropy: None,
            ensemble_size: 2,
            initial_random_steps: 10_000,
            hidden_sizes: vec![64, 64],
            activation: Activation::Relu,
            buffer_capacity: None,
            update_order: DEFAULT_UPDATE_ORDER.to_vec(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(param_err(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.batch_size == 0 || self.replay_ratio == 0 || self.ensemble_size == 0 || self.initial_random_steps == 0 {
            return Err(param_err(
                "batch_size, replay_ratio, ensemble_size and initial_random_steps must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(param_err("tau must lie in [0, 1]"));
        }
        for lr in [self.actor_lr, self.critic_lr, self.alpha_lr] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(param_err("learning rates must be finite and non-negative"));
            }
        }
        if !(self.initial_alpha.is_finite() && self.initial_alpha > 0.0) {
            return Err(param_err("initial_alpha must be positive"));
        }
        if self.target_entropy.is_some_and(|h| !h.is_finite()) {
            return Err(param_err("target_entropy must be finite"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(param_err("hidden_sizes must be a nonempty list of positive widths"));
        }
        if self.buffer_capacity == Some(0) {
            return Err(param_err("buffer_capacity must be positive"));
        }
        let mut order = self.update_order.clone();
        order.sort_by_key(|p| *p as u8);
        let mut expected = DEFAULT_UPDATE_ORDER.to_vec();
        expected.sort_by_key(|p| *p as u8);
        if order != expected {
            return Err(param_err(
                "update_order must list critic, actor, temperature and pessimism once each",
            ));
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64) / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = AgentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.target_entropy_for(1), -0.5);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.ensemble_size, 2);
    }

    #[test]
    fn order_must_be_a_permutation() {
        let c = AgentConfig {
            update_order: vec![UpdatePhase::Critic, UpdatePhase::Critic, UpdatePhase::Actor, UpdatePhase::Pessimism],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let ok = AgentConfig {
            update_order: vec![
                UpdatePhase::Actor,
                UpdatePhase::Critic,
                UpdatePhase::Pessimism,
                UpdatePhase::Temperature,
            ],
            ..Default::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<AgentConfig>(r#"{"gama":0.9}"#).is_err());
        let c: AgentConfig = serde_json::from_str(r#"{"batch_size":64,"hidden_sizes":[32,32]}"#).unwrap();
        assert_eq!(c.batch_size, 64);
    }
}
