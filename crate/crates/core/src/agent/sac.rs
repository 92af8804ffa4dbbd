use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::buffer::Batch;
use crate::agent::AgentConfig;
use crate::error::{param_err, Error, Result};
use crate::nn::adam::adam_step_slice;
use crate::nn::{
    adam_step, critic_input, forward_batch, input_gradient, polyak_update, AdamState, CriticEnsembleNet, EnsembleBatch, GaussianPolicyHead,
    ParamVector, SampleMode,
};
use crate::pessimism::FrozenBatch;

/// `α = exp(log_alpha)` with its target entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub log_alpha: f64,
    pub target_entropy: f64,
}

impl TemperatureState {
    pub fn new(initial_alpha: f64, target_entropy: f64) -> Self {
        Self {
            log_alpha: initial_alpha.ln(),
            target_entropy,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// Networks, optimizers and temperature of one agent.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: GaussianPolicyHead,
    pub critics: CriticEnsembleNet,
    pub actor_opt: AdamState,
    pub critic_opts: Vec<AdamState>,
    pub temperature: TemperatureState,
    pub alpha_opt: AdamState,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, obs_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = GaussianPolicyHead::new(obs_dim, action_dim, &config.hidden_sizes, config.activation, rng)?;
        let critics = CriticEnsembleNet::new(
            obs_dim,
            action_dim,
            &config.hidden_sizes,
            config.activation,
            config.ensemble_size,
            rng,
        )?;
        let actor_opt = AdamState::new(actor.spec.n_params(), config.actor_lr);
        let critic_opts = (0..critics.k())
            .map(|_| AdamState::new(critics.spec.n_params(), config.critic_lr))
            .collect();
        let temperature = TemperatureState::new(config.initial_alpha, config.target_entropy_for(action_dim));
        let alpha_opt = AdamState::new(1, config.alpha_lr);
        Ok(Self {
            config,
            actor,
            critics,
            actor_opt,
            critic_opts,
            temperature,
            alpha_opt,
        })
    }

    /// Fresh actor, critics, targets, optimizer moments and temperature.
    /// Buffers live elsewhere and are untouched.
    pub fn reset_parameters<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.actor.reinit(rng);
        self.critics.reinit(rng);
        self.actor_opt.reset();
        self.critic_opts.iter_mut().for_each(AdamState::reset);
        self.temperature.log_alpha = self.config.initial_alpha.ln();
        self.alpha_opt.reset();
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R, mode: SampleMode) -> Result<Vec<f64>> {
        Ok(crate::nn::policy_sample(&self.actor, obs, rng, mode)?.0)
    }
}

/// `y = r + γ·(Q^lb_target(s',a') − α·log π(a'|s'))` with `a' ~ π(·|s')`;
/// terminal rows drop the bootstrap.
pub fn compute_targets<R: Rng + ?Sized>(
    batch: &Batch,
    critics: &CriticEnsembleNet,
    actor: &GaussianPolicyHead,
    beta: f64,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let next = actor.sample_batch(batch.next_obs.view(), rng, SampleMode::Stochastic)?;
    let input = critic_input(batch.next_obs.view(), next.actions.view());
    let ens = critics.members_batch(input.view(), true)?;
    let v = ens.lower_bound(beta) - &(&next.log_probs * alpha);
    Ok(&batch.rewards + &(&batch.bootstrap * &v * gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticReport {
    pub loss: f64,
    /// Batch mean of the online ensemble std at `(s, a)` before the step.
    pub mean_std: f64,
}

/// Loss `mean_{b,i}(Q_i(s,a) − y)²` and its gradient for every member.
pub fn critic_loss_and_grads(batch: &Batch, critics: &CriticEnsembleNet, y: &Array1<f64>) -> Result<(CriticReport, Vec<ParamVector>)> {
    let n = batch.len();
    if y.len() != n || n == 0 {
        return Err(param_err("target vector does not match the batch"));
    }
    let k = critics.k();
    let input = critic_input(batch.obs.view(), batch.actions.view());
    let scale = 2.0 / (n * k) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(k);
    let mut members = Vec::with_capacity(k);
    for p in &critics.online {
        let (q, cache) = forward_batch(p, &critics.spec, input.view())?;
        let q = q.column(0).to_owned();
        let diff = &q - y;
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        let upstream = (&diff * scale).insert_axis(Axis(1));
        let mut g = ParamVector::zeros(critics.spec.n_params());
        crate::nn::backward_batch(p, &critics.spec, &cache, upstream.view(), &mut g)?;
        grads.push(g);
        members.push(q);
    }
    loss /= (n * k) as f64;
    let stats = EnsembleBatch::from_members(members);
    let mean_std = stats.std.mean().unwrap_or(0.0);
    Ok((CriticReport { loss, mean_std }, grads))
}

/// One joint optimizer step on all critic members.
pub fn critic_update(batch: &Batch, critics: &mut CriticEnsembleNet, opts: &mut [AdamState], y: &Array1<f64>) -> Result<CriticReport> {
    let (report, grads) = critic_loss_and_grads(batch, critics, y)?;
    if !report.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite critic loss {}", report.loss)));
    }
    for ((p, opt), g) in critics.online.iter_mut().zip(opts.iter_mut()).zip(&grads) {
        adam_step(opt, p, g)?;
    }
    Ok(report)
}

/// Polyak-averages every target member toward its online copy.
pub fn update_targets(critics: &mut CriticEnsembleNet, tau: f64) -> Result<()> {
    let CriticEnsembleNet { online, target, .. } = critics;
    for (t, o) in target.iter_mut().zip(online.iter()) {
        polyak_update(t, o, tau)?;
    }
    Ok(())
}

/// Actor loss `mean(α·log π(a|s) − Q^lb_online(s, a))` for reparameterized
/// `a` with the given noise, and its gradient in the actor parameters.
pub fn actor_loss_and_grad(
    obs: ArrayView2<'_, f64>,
    critics: &CriticEnsembleNet,
    actor: &GaussianPolicyHead,
    alpha: f64,
    beta: f64,
    noise: Array2<f64>,
) -> Result<(f64, ParamVector, Array1<f64>)> {
    let n = obs.nrows();
    if n == 0 {
        return Err(param_err("empty actor batch"));
    }
    let pb = actor.evaluate(obs, noise)?;
    let input = critic_input(obs, pb.actions.view());
    let k = critics.k();
    let mut members = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    for p in &critics.online {
        let (q, cache) = forward_batch(p, &critics.spec, input.view())?;
        members.push(q.column(0).to_owned());
        caches.push(cache);
    }
    let stats = EnsembleBatch::from_members(members);
    let lb = stats.lower_bound(beta);
    let loss = (&pb.log_probs * alpha - &lb).mean().expect("nonempty");
    let obs_dim = obs.ncols();
    let mut d_action = Array2::zeros((n, actor.action_dim()));
    let kf = k as f64;
    for (i, (p, cache)) in critics.online.iter().zip(&caches).enumerate() {
        let mut up = Array2::zeros((n, 1));
        for b in 0..n {
            let sd = stats.std[b];
            let dstd = if sd > 0.0 {
                (stats.members[i][b] - stats.mean[b]) / (kf * sd)
            } else {
                0.0
            };
            let dlb = 1.0 / kf - beta * dstd;
            up[[b, 0]] = -dlb / n as f64;
        }
        let g_in = input_gradient(p, &critics.spec, cache, up.view())?;
        d_action += &g_in.slice(s![.., obs_dim..]);
    }
    let d_logp = Array1::from_elem(n, alpha / n as f64);
    let mut grad = ParamVector::zeros(actor.spec.n_params());
    actor.backward(&pb, d_action.view(), d_logp.view(), &mut grad)?;
    Ok((loss, grad, pb.log_probs))
}

/// One ascent step on the actor; critics are read only.
pub fn actor_update<R: Rng + ?Sized>(
    obs: ArrayView2<'_, f64>,
    critics: &CriticEnsembleNet,
    actor: &mut GaussianPolicyHead,
    opt: &mut AdamState,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<f64> {
    let noise = Array2::from_shape_simple_fn((obs.nrows(), actor.action_dim()), || rng.sample::<f64, _>(StandardNormal));
    let (loss, grad, _) = actor_loss_and_grad(obs, critics, actor, alpha, beta, noise)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite actor loss {loss}")));
    }
    adam_step(opt, &mut actor.params, &grad)?;
    Ok(loss)
}

/// `∂/∂log α` of `α·mean(−log π − H*)`.
pub fn temperature_gradient(temp: &TemperatureState, log_probs: &[f64]) -> f64 {
    let n = log_probs.len() as f64;
    let excess = log_probs.iter().map(|lp| -lp - temp.target_entropy).sum::<f64>() / n;
    temp.alpha() * excess
}

/// Temperature step on freshly sampled actions; returns the new α.
pub fn temperature_update<R: Rng + ?Sized>(
    obs: ArrayView2<'_, f64>,
    actor: &GaussianPolicyHead,
    temp: &mut TemperatureState,
    opt: &mut AdamState,
    rng: &mut R,
) -> Result<f64> {
    let pb = actor.sample_batch(obs, rng, SampleMode::Stochastic)?;
    let g = temperature_gradient(temp, pb.log_probs.as_slice().expect("contiguous"));
    let mut la = [temp.log_alpha];
    adam_step_slice(opt, &mut la, &[g])?;
    temp.log_alpha = la[0];
    Ok(temp.alpha())
}

/// Frozen β-gradient inputs on a batch, with online critics:
/// `Q^μ(s,a)`, and `Q^μ, Q^σ, α·log π` at `(s', a' ~ π(·|s'))`.
pub fn frozen_batch<R: Rng + ?Sized>(
    batch: &Batch,
    critics: &CriticEnsembleNet,
    actor: &GaussianPolicyHead,
    alpha: f64,
    rng: &mut R,
) -> Result<FrozenBatch> {
    let here = critics.members_batch(critic_input(batch.obs.view(), batch.actions.view()).view(), false)?;
    let next = actor.sample_batch(batch.next_obs.view(), rng, SampleMode::Stochastic)?;
    let there = critics.members_batch(critic_input(batch.next_obs.view(), next.actions.view()).view(), false)?;
    Ok(FrozenBatch {
        q_estimate: here.mean.to_vec(),
        reward: batch.rewards.to_vec(),
        next_mean: there.mean.to_vec(),
        next_std: there.std.to_vec(),
        next_alpha_logp: (&next.log_probs * alpha).to_vec(),
        bootstrap: batch.bootstrap.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::buffer::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_agent(seed: u64) -> Agent {
        let cfg = AgentConfig {
            hidden_sizes: vec![8, 8],
            batch_size: 4,
            ..Default::default()
        };
        Agent::new(cfg, 3, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<_> = (0..n)
            .map(|i| Transition {
                id: i as u64,
                obs: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: vec![rng.gen_range(-1.0..1.0)],
                reward: rng.gen_range(-1.0..0.0),
                next_obs: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                terminal: i == 0,
            })
            .collect();
        Batch::from_transitions(&ts, 3, 1).unwrap()
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let a = small_agent(0);
        let b = batch(6, 1);
        let y = compute_targets(&b, &a.critics, &a.actor, 1.0, 0.3, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(y, b.rewards);
    }

    #[test]
    fn terminal_rows_drop_bootstrap() {
        let a = small_agent(0);
        let b = batch(6, 1);
        let y = compute_targets(&b, &a.critics, &a.actor, 1.0, 0.3, 0.99, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(y[0], b.rewards[0]);
    }

    #[test]
    fn critic_step_reduces_loss_on_fixed_targets() {
        let mut a = small_agent(3);
        let b = batch(16, 4);
        let y = Array1::from_elem(16, 2.0);
        let first = critic_update(&b, &mut a.critics, &mut a.critic_opts, &y).unwrap().loss;
        for _ in 0..200 {
            critic_update(&b, &mut a.critics, &mut a.critic_opts, &y).unwrap();
        }
        let (last, _) = critic_loss_and_grads(&b, &a.critics, &y).unwrap();
        assert!(last.loss < first);
        assert_eq!(a.critic_opts[0].step_count, 201);
    }

    #[test]
    fn temperature_gradient_signs() {
        let t = TemperatureState::new(1.0, -0.5);
        assert_eq!(temperature_gradient(&t, &[0.5, 0.5]), 0.0);
        // Entropy above target (−log π = 1 > −0.5): gradient positive, α falls.
        assert!(temperature_gradient(&t, &[-1.0]) > 0.0);
        assert!(temperature_gradient(&t, &[2.0]) < 0.0);
    }

    #[test]
    fn reset_restores_fresh_state() {
        let mut a = small_agent(5);
        let b = batch(8, 6);
        let y = Array1::from_elem(8, 1.0);
        critic_update(&b, &mut a.critics, &mut a.critic_opts, &y).unwrap();
        a.temperature.log_alpha = 0.7;
        a.reset_parameters(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.critics.online, a.critics.target);
        assert!(a
            .critic_opts
            .iter()
            .all(|o| o.step_count == 0 && o.first_moment.iter().all(|&m| m == 0.0)));
        assert_eq!(a.alpha(), 1.0);
        let mut c = a.clone();
        a.reset_parameters(&mut ChaCha8Rng::seed_from_u64(11));
        c.reset_parameters(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a.actor.params, c.actor.params);
        assert_eq!(a.critics.online, c.critics.online);
    }
}
