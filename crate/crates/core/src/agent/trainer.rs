use rand::Rng;

use crate::agent::buffer::{route_transition, validation_batch_size, Batch, Destination, ReplayBuffer, Transition, ValidationBuffer};
use crate::agent::sac::{actor_update, compute_targets, critic_update, frozen_batch, temperature_update, update_targets, Agent};
use crate::agent::{AgentConfig, UpdatePhase};
use crate::env::Env;
use crate::error::Result;
use crate::nn::SampleMode;
use crate::pessimism::{
    ablation_update, opl_lambda_return, top_select, top_update, AdjustOutcome, DataSource, GradientAdjuster, OplRecord, OplState,
    PessimismConfig, PessimismState, ResolvedAdjuster, TopBanditState,
};
use crate::rng::{stream, streams, RunRng};

/// Scalars produced by one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub env_step: u64,
    pub destination: Destination,
    pub updates: usize,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Batch mean of `Q^σ` on the last critic batch.
    pub critic_disagreement: Option<f64>,
    pub pessimism_skipped: usize,
    /// Undiscounted return of an episode that ended on this step.
    pub episode_return: Option<f64>,
}

/// One training run's learner state, buffers and random streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub agent: Agent,
    pub pessimism: PessimismState,
    pub adjuster: ResolvedAdjuster,
    pub opl: OplState,
    pub bandit: TopBanditState,
    pub train_buffer: ReplayBuffer,
    pub validation_buffer: ValidationBuffer,
    pub validation_ratio: f64,
    seed: u64,
    env_rng: RunRng,
    routing_rng: RunRng,
    sampling_rng: RunRng,
    policy_rng: RunRng,
    bandit_rng: RunRng,
    obs: Vec<f64>,
    episode_return: f64,
    env_steps: u64,
    next_id: u64,
    resets: u64,
    gradient_updates: u64,
}

impl Trainer {
    pub fn new(
        agent_cfg: AgentConfig,
        pessimism_cfg: &PessimismConfig,
        validation_ratio: f64,
        buffer_capacity: usize,
        env: &mut Env,
        seed: u64,
    ) -> Result<Self> {
        let adjuster = pessimism_cfg.resolve()?;
        // Validate the ratio once up front.
        route_transition(validation_ratio, &mut stream(seed, streams::ROUTING))?;
        let capacity = agent_cfg.buffer_capacity.unwrap_or(buffer_capacity).max(1);
        let mut init_rng = stream(seed, streams::INIT);
        let agent = Agent::new(agent_cfg, env.obs_dim(), env.action_dim(), &mut init_rng)?;
        let mut pessimism = PessimismState::new(pessimism_cfg.initial_beta, pessimism_cfg.lr);
        pessimism.allow_negative_beta = pessimism_cfg.allow_negative_beta;
        let mut env_rng = stream(seed, streams::ENV);
        let obs = env.reset(&mut env_rng);
        let mut trainer = Self {
            agent,
            pessimism,
            adjuster,
            opl: OplState::new(pessimism_cfg.opl_window, pessimism_cfg.opl_lambda)?,
            bandit: TopBanditState::new(pessimism_cfg.bandit_lr, pessimism_cfg.bandit_temperature),
            train_buffer: ReplayBuffer::new(capacity, env.obs_dim(), env.action_dim())?,
            validation_buffer: ValidationBuffer::new(capacity, env.obs_dim(), env.action_dim())?,
            validation_ratio,
            seed,
            env_rng,
            routing_rng: stream(seed, streams::ROUTING),
            sampling_rng: stream(seed, streams::SAMPLING),
            policy_rng: stream(seed, streams::POLICY),
            bandit_rng: stream(seed, streams::BANDIT),
            obs,
            episode_return: 0.0,
            env_steps: 0,
            next_id: 0,
            resets: 0,
            gradient_updates: 0,
        };
        if trainer.adjuster == ResolvedAdjuster::Top {
            trainer.pessimism.beta = top_select(&mut trainer.bandit, &mut trainer.bandit_rng);
        }
        Ok(trainer)
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn gradient_updates(&self) -> u64 {
        self.gradient_updates
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn beta(&self) -> f64 {
        self.pessimism.beta
    }

    pub fn alpha(&self) -> f64 {
        self.agent.alpha()
    }

    pub fn config(&self) -> &AgentConfig {
        &self.agent.config
    }

    /// Full-parameter reset from a dedicated stream; buffers are kept and the
    /// on-policy window is cleared.
    pub fn reset_parameters(&mut self) {
        let mut rng = stream(self.seed, streams::RESET_BASE + self.resets);
        self.agent.reset_parameters(&mut rng);
        self.opl.clear();
        self.resets += 1;
        log::debug!(
            "reset {} at step {}: actor optimizer step_count -> {}",
            self.resets,
            self.env_steps,
            self.agent.actor_opt.step_count
        );
    }

    fn updates_ready(&self) -> bool {
        self.env_steps >= self.agent.config.initial_random_steps as u64 && self.train_buffer.len() >= self.agent.config.batch_size
    }

    /// One environment step, routing, then `replay_ratio` update iterations
    /// once warmup is over.
    pub fn train_step(&mut self, env: &mut Env) -> Result<StepReport> {
        let warmup = self.env_steps < self.agent.config.initial_random_steps as u64;
        let action = if warmup {
            (0..env.action_dim()).map(|_| self.policy_rng.gen_range(-1.0..1.0)).collect()
        } else {
            self.agent.act(&self.obs, &mut self.policy_rng, SampleMode::Stochastic)?
        };
        let step = env.step(&action, &mut self.env_rng)?;
        let transition = Transition {
            id: self.next_id,
            obs: std::mem::take(&mut self.obs),
            action,
            reward: step.reward,
            next_obs: step.obs.clone(),
            terminal: step.terminal,
        };
        self.next_id += 1;
        let destination = route_transition(self.validation_ratio, &mut self.routing_rng)?;
        match destination {
            Destination::Training => self.train_buffer.push(&transition)?,
            Destination::Validation => self.validation_buffer.push(&transition)?,
        }
        self.opl.push(OplRecord {
            obs: transition.obs,
            action: transition.action,
            reward: transition.reward,
            next_obs: transition.next_obs,
            terminal: transition.terminal,
        });
        self.episode_return += step.reward;
        self.env_steps += 1;

        let mut report = StepReport {
            env_step: self.env_steps,
            destination,
            updates: 0,
            critic_loss: None,
            actor_loss: None,
            alpha: self.alpha(),
            beta: self.beta(),
            critic_disagreement: None,
            pessimism_skipped: 0,
            episode_return: None,
        };
        if self.updates_ready() {
            for _ in 0..self.agent.config.replay_ratio {
                self.update_iteration(&mut report)?;
                report.updates += 1;
                self.gradient_updates += 1;
            }
        }

        if step.terminal || step.truncated {
            let ret = self.episode_return;
            report.episode_return = Some(ret);
            self.episode_return = 0.0;
            self.opl.clear();
            if self.adjuster == ResolvedAdjuster::Top {
                top_update(&mut self.bandit, ret)?;
                self.pessimism.beta = top_select(&mut self.bandit, &mut self.bandit_rng);
            }
            self.obs = env.reset(&mut self.env_rng);
        } else {
            self.obs = step.obs;
        }
        report.alpha = self.alpha();
        report.beta = self.beta();
        Ok(report)
    }

    fn update_iteration(&mut self, report: &mut StepReport) -> Result<()> {
        let cfg = &self.agent.config;
        let (batch_size, gamma, tau) = (cfg.batch_size, cfg.gamma, cfg.tau);
        let order = cfg.update_order.clone();
        let batch = self
            .train_buffer
            .sample(batch_size, &mut self.sampling_rng)
            .expect("warmup guarantees data");
        for phase in order {
            match phase {
                UpdatePhase::Critic => {
                    let agent = &mut self.agent;
                    let y = compute_targets(
                        &batch,
                        &agent.critics,
                        &agent.actor,
                        self.pessimism.beta,
                        agent.temperature.alpha(),
                        gamma,
                        &mut self.policy_rng,
                    )?;
                    let r = critic_update(&batch, &mut agent.critics, &mut agent.critic_opts, &y)?;
                    update_targets(&mut agent.critics, tau)?;
                    report.critic_loss = Some(r.loss);
                    report.critic_disagreement = Some(r.mean_std);
                }
                UpdatePhase::Actor => {
                    let agent = &mut self.agent;
                    let loss = actor_update(
                        batch.obs.view(),
                        &agent.critics,
                        &mut agent.actor,
                        &mut agent.actor_opt,
                        agent.temperature.alpha(),
                        self.pessimism.beta,
                        &mut self.policy_rng,
                    )?;
                    report.actor_loss = Some(loss);
                }
                UpdatePhase::Temperature => {
                    let agent = &mut self.agent;
                    temperature_update(
                        batch.obs.view(),
                        &agent.actor,
                        &mut agent.temperature,
                        &mut agent.alpha_opt,
                        &mut self.policy_rng,
                    )?;
                }
                UpdatePhase::Pessimism => {
                    if let ResolvedAdjuster::Gradient(adj) = self.adjuster {
                        if self.pessimism_step(adj, &batch)? == AdjustOutcome::Skipped {
                            report.pessimism_skipped += 1;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs a gradient adjuster on data from its configured source.
    pub fn pessimism_step(&mut self, adj: GradientAdjuster, replay_batch: &Batch) -> Result<AdjustOutcome> {
        let gamma = self.agent.config.gamma;
        let alpha = self.agent.alpha();
        let frozen = match adj.source {
            DataSource::Replay => frozen_batch(replay_batch, &self.agent.critics, &self.agent.actor, alpha, &mut self.policy_rng)?,
            DataSource::Validation => {
                let n = validation_batch_size(self.validation_ratio, self.agent.config.batch_size);
                if n == 0 {
                    return Ok(AdjustOutcome::Skipped);
                }
                let Some(vb) = self.validation_buffer.sample(n, &mut self.sampling_rng) else {
                    return Ok(AdjustOutcome::Skipped);
                };
                frozen_batch(&vb, &self.agent.critics, &self.agent.actor, alpha, &mut self.policy_rng)?
            }
            DataSource::Online => {
                if self.opl.is_empty() {
                    return Ok(AdjustOutcome::Skipped);
                }
                let records: Vec<Transition> = self
                    .opl
                    .window
                    .iter()
                    .map(|r| Transition {
                        id: 0,
                        obs: r.obs.clone(),
                        action: r.action.clone(),
                        reward: r.reward,
                        next_obs: r.next_obs.clone(),
                        terminal: r.terminal,
                    })
                    .collect();
                let wb = Batch::from_transitions(&records, self.train_buffer_obs_dim(), self.agent.actor.action_dim())?;
                let mut frozen = frozen_batch(&wb, &self.agent.critics, &self.agent.actor, alpha, &mut self.policy_rng)?;
                let beta = self.pessimism.beta;
                let next_v: Vec<f64> = (0..frozen.len()).map(|i| frozen.next_v_lb(i, beta)).collect();
                frozen.q_estimate = opl_lambda_return(&frozen.reward, &next_v, &frozen.bootstrap, self.opl.lambda, gamma)?;
                frozen
            }
        };
        ablation_update(adj, &mut self.pessimism, &frozen, gamma)
    }

    fn train_buffer_obs_dim(&self) -> usize {
        self.agent.actor.obs_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::pessimism::AdjusterKind;

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            batch_size: 8,
            hidden_sizes: vec![8, 8],
            initial_random_steps: 20,
            ..Default::default()
        }
    }

    #[test]
    fn no_updates_during_warmup_then_replay_ratio_per_step() {
        for rr in [2, 16] {
            let mut env = EnvConfig::default().build().unwrap();
            let cfg = AgentConfig {
                replay_ratio: rr,
                ..tiny_cfg()
            };
            let mut t = Trainer::new(cfg, &PessimismConfig::default(), 0.0, 1000, &mut env, 1).unwrap();
            for _ in 0..19 {
                assert_eq!(t.train_step(&mut env).unwrap().updates, 0);
            }
            assert_eq!(t.train_step(&mut env).unwrap().updates, rr);
            assert_eq!(t.train_step(&mut env).unwrap().updates, rr);
            assert_eq!(t.agent.actor_opt.step_count, 2 * rr as u64);
        }
    }

    #[test]
    fn vpl_trainer_moves_beta_and_routes_exclusively() {
        let mut env = EnvConfig::default().build().unwrap();
        let pc = PessimismConfig {
            adjuster: AdjusterKind::Vpl,
            lr: 1e-2,
            ..Default::default()
        };
        let mut t = Trainer::new(tiny_cfg(), &pc, 0.25, 1000, &mut env, 3).unwrap();
        for _ in 0..60 {
            t.train_step(&mut env).unwrap();
        }
        assert_ne!(t.beta(), 1.0);
        let train: std::collections::HashSet<_> = t.train_buffer.ids().iter().collect();
        assert!(t.validation_buffer.ids().iter().all(|id| !train.contains(id)));
        assert_eq!(t.train_buffer.len() + t.validation_buffer.len(), 60);
    }

    #[test]
    fn opl_and_top_run() {
        for adjuster in [AdjusterKind::Opl, AdjusterKind::Top, AdjusterKind::Gpl] {
            let mut env = EnvConfig::default().build().unwrap();
            let pc = PessimismConfig {
                adjuster,
                lr: 1e-2,
                ..Default::default()
            };
            let mut t = Trainer::new(tiny_cfg(), &pc, 0.0, 1000, &mut env, 4).unwrap();
            for _ in 0..420 {
                t.train_step(&mut env).unwrap();
            }
            assert!(t.beta() >= 0.0);
            if adjuster == AdjusterKind::Top {
                assert!(t.beta() == 0.0 || t.beta() == 1.0);
                assert_ne!(t.bandit.arm_values, [0.0, 0.0]);
            }
        }
    }
}
