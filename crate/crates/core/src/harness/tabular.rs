//! Exact counterparts of the continuous agent on a tabular environment: the
//! bin distribution induced by the squashed Gaussian, its soft Q and the
//! approximation error measured against it.

use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::agent::Agent;
use crate::env::{Env, TabularEnv};
use crate::error::{param_err, Result};
use crate::harness::metrics::{approx_error_from_rollout, critic_mean_at, policy_rollout};
use crate::mdp::{exact_soft_q_with_bonus, TabularPolicy};
use crate::nn::policy::{LOG_STD_MAX, LOG_STD_MIN, TANH_GUARD};
use crate::nn::{predict_batch, GaussianPolicyHead};
use crate::rng::RunRng;
use crate::table::SaTable;

const QUAD_POINTS: usize = 4001;
const QUAD_HALF_WIDTH: f64 = 8.0;

/// Pre-squash mean and clamped log-std of the one-dimensional head at every
/// one-hot state.
pub fn state_gaussians(head: &GaussianPolicyHead, env: &TabularEnv) -> Result<Vec<(f64, f64)>> {
    if head.action_dim() != 1 {
        return Err(param_err("tabular oracles need a one-dimensional action"));
    }
    let n = env.mdp.n_states;
    let obs = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let out = predict_batch(&head.params, &head.spec, obs.view())?;
    Ok((0..n).map(|s| (out[[s, 0]], out[[s, 1]].clamp(LOG_STD_MIN, LOG_STD_MAX))).collect())
}

/// Probability mass the squashed Gaussian puts on each action bin.
pub fn bin_probabilities(mu: f64, log_std: f64, edges: &[f64]) -> Result<Vec<f64>> {
    let normal = Normal::new(mu, log_std.exp()).map_err(|e| param_err(e.to_string()))?;
    let cdf = |edge: f64| {
        if edge <= -1.0 {
            0.0
        } else if edge >= 1.0 {
            1.0
        } else {
            normal.cdf(edge.atanh())
        }
    };
    let mut p: Vec<f64> = edges.windows(2).map(|w| (cdf(w[1]) - cdf(w[0])).max(0.0)).collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(param_err("bin probabilities vanish"));
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// `E[log π(a)]` of the squashed Gaussian, including the tanh guard.
pub fn squashed_expected_log_prob(mu: f64, log_std: f64) -> f64 {
    let sigma = log_std.exp();
    let h = 2.0 * QUAD_HALF_WIDTH / (QUAD_POINTS - 1) as f64;
    let mut jac = 0.0;
    for i in 0..QUAD_POINTS {
        let e = -QUAD_HALF_WIDTH + i as f64 * h;
        let w = if i == 0 || i == QUAD_POINTS - 1 { 0.5 } else { 1.0 };
        let a = (mu + sigma * e).tanh();
        let density = (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
        jac += w * density * (1.0 - a * a + TANH_GUARD).ln();
    }
    jac *= h;
    -0.5 - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln() - jac
}

/// Bin policy and exact soft Q of the agent's current actor, with the entropy
/// bonus taken from the continuous density the agent actually optimizes.
pub fn exact_agent_q(agent: &Agent, env: &TabularEnv) -> Result<(TabularPolicy, SaTable)> {
    let edges = env.bin_edges();
    let gauss = state_gaussians(&agent.actor, env)?;
    let mut probs = SaTable::zeros(env.mdp.n_states, env.mdp.n_actions);
    let mut bonus = Vec::with_capacity(gauss.len());
    for (s, &(mu, ls)) in gauss.iter().enumerate() {
        for (a, p) in bin_probabilities(mu, ls, &edges)?.into_iter().enumerate() {
            probs.set(s, a, p);
        }
        bonus.push(-agent.alpha() * squashed_expected_log_prob(mu, ls));
    }
    let pi = TabularPolicy::new(probs)?;
    // Discount with the agent's γ, which is what its critic estimates.
    let mut mdp = env.mdp.clone();
    mdp.gamma = agent.config.gamma;
    let q = exact_soft_q_with_bonus(&mdp, &pi, &bonus)?;
    Ok((pi, q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularApproxReport {
    /// Rollout-formula metric, `Q^μ − Q̂`.
    pub metric: f64,
    /// Same sign convention against the exact soft Q, `Q^μ − Q_exact`.
    pub exact: f64,
    /// `Q̂ − Q_exact` averaged over the starts.
    pub formula_gap: f64,
}

/// Rollout metric and exact error measured on the same starting pairs.
pub fn tabular_approx_error(
    agent: &Agent,
    env: &Env,
    n_starts: usize,
    rollout_len: usize,
    rng: &mut RunRng,
) -> Result<TabularApproxReport> {
    let Env::Tabular(tab) = env else {
        return Err(param_err("exact approximation error needs a tabular environment"));
    };
    if n_starts == 0 || rollout_len == 0 {
        return Err(param_err("n_starts and rollout_len must be positive"));
    }
    let (_, q_exact) = exact_agent_q(agent, tab)?;
    let (alpha, gamma) = (agent.alpha(), agent.config.gamma);
    let mut out = TabularApproxReport {
        metric: 0.0,
        exact: 0.0,
        formula_gap: 0.0,
    };
    for _ in 0..n_starts {
        let r = policy_rollout(agent, env, rollout_len, rng)?;
        let q_mu = critic_mean_at(&agent.critics, &r.obs, &r.action)?;
        let s = r
            .obs
            .iter()
            .position(|&x| x == 1.0)
            .ok_or_else(|| param_err("observation is not one-hot"))?;
        let qe = q_exact.get(s, tab.action_index(r.action[0]));
        let m = approx_error_from_rollout(q_mu, &r.rewards, &r.log_probs, alpha, gamma);
        out.metric += m;
        out.exact += q_mu - qe;
        out.formula_gap += q_mu - m - qe;
    }
    let n = n_starts as f64;
    out.metric /= n;
    out.exact /= n;
    out.formula_gap /= n;
    Ok(out)
}
