use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::agent::{frozen_batch, Agent, Batch};
use crate::env::Env;
use crate::error::{param_err, Error, Result};
use crate::nn::{critic_input, policy_sample, CriticEnsembleNet, GaussianPolicyHead, SampleMode};
use crate::pessimism::FrozenBatch;
use crate::rng::RunRng;

pub const METRICS_HEADER: &str = "step,eval_return,beta,alpha,critic_disagreement,approx_error,overfit_ratio,critic_loss,wall_ms";

/// Denominators below this make the overfitting ratio NaN.
pub const OVERFIT_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_return: f64,
    pub beta: f64,
    pub alpha: f64,
    pub critic_disagreement: f64,
    pub approx_error: f64,
    pub overfit_ratio: f64,
    pub critic_loss: f64,
    pub wall_ms: f64,
}

/// Nine significant digits; non-finite values print as `NaN`, `inf`, `-inf`.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

impl MetricsRow {
    /// Row written when a run aborts: every measurement NaN.
    pub fn error_row(step: u64) -> Self {
        Self {
            step,
            eval_return: f64::NAN,
            beta: f64::NAN,
            alpha: f64::NAN,
            critic_disagreement: f64::NAN,
            approx_error: f64::NAN,
            overfit_ratio: f64::NAN,
            critic_loss: f64::NAN,
            wall_ms: f64::NAN,
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.eval_return,
            self.beta,
            self.alpha,
            self.critic_disagreement,
            self.approx_error,
            self.overfit_ratio,
            self.critic_loss,
            self.wall_ms,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = self.step.to_string();
        for v in self.values() {
            line.push(',');
            line.push_str(&format_float(v));
        }
        line
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!("metrics row has {} fields, expected 9", fields.len())));
        }
        let step = fields[0].parse().map_err(|_| Error::Config(format!("bad step `{}`", fields[0])))?;
        let mut v = [0.0; 8];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| Error::Config(format!("bad float `{f}`")))?;
        }
        Ok(Self {
            step,
            eval_return: v[0],
            beta: v[1],
            alpha: v[2],
            critic_disagreement: v[3],
            approx_error: v[4],
            overfit_ratio: v[5],
            critic_loss: v[6],
            wall_ms: v[7],
        })
    }
}

/// Incremental CSV sink; every row is flushed as it is written.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for r in rows {
        w.write_row(r)?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::Config(format!("{} does not start with the metrics header", path.display()))),
    }
    lines.map(|l| MetricsRow::parse_csv_line(&l?)).collect()
}

/// Ratio of validation to training TD errors `u^lb = r + γV^lb(s') − Q^μ(s,a)`,
/// squared by default.
pub fn overfit_ratio(train: &FrozenBatch, val: &FrozenBatch, beta: f64, gamma: f64, signed: bool) -> f64 {
    if train.is_empty() || val.is_empty() {
        return f64::NAN;
    }
    let stat = |b: &FrozenBatch| {
        let d = b.residuals(beta, gamma);
        let n = d.len() as f64;
        if signed {
            d.iter().map(|x| -x).sum::<f64>() / n
        } else {
            d.iter().map(|x| x * x).sum::<f64>() / n
        }
    };
    let den = stat(train);
    if den.abs() < OVERFIT_DENOM_FLOOR {
        return f64::NAN;
    }
    stat(val) / den
}

#[allow(clippy::too_many_arguments)]
pub fn overfit_metric<R: Rng + ?Sized>(
    critics: &CriticEnsembleNet,
    actor: &GaussianPolicyHead,
    beta: f64,
    alpha: f64,
    gamma: f64,
    train_batch: &Batch,
    val_batch: &Batch,
    signed: bool,
    rng: &mut R,
) -> Result<f64> {
    if train_batch.is_empty() || val_batch.is_empty() {
        return Err(param_err("overfitting ratio needs nonempty batches"));
    }
    let t = frozen_batch(train_batch, critics, actor, alpha, rng)?;
    let v = frozen_batch(val_batch, critics, actor, alpha, rng)?;
    Ok(overfit_ratio(&t, &v, beta, gamma, signed))
}

/// `Q^μ − (R̂ − α·log π̂)/(1−γ)`; positive means overestimation.
pub fn approx_error_from_rollout(q_mean: f64, rewards: &[f64], log_probs: &[f64], alpha: f64, gamma: f64) -> f64 {
    let r_hat = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let lp_hat = if log_probs.is_empty() {
        0.0
    } else {
        log_probs.iter().sum::<f64>() / log_probs.len() as f64
    };
    let q = (r_hat - alpha * lp_hat) / (1.0 - gamma);
    q_mean - q
}

/// One policy rollout from a fresh start: the start, its first action and the
/// reward and log-probability sequences.
pub struct Rollout {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Environment snapshot at the start.
    pub start: Env,
}

pub fn policy_rollout(agent: &Agent, env: &Env, rollout_len: usize, rng: &mut RunRng) -> Result<Rollout> {
    let mut sim = env.clone();
    let mut obs = sim.reset(rng);
    let start = sim.clone();
    let first_obs = obs.clone();
    let mut first_action = Vec::new();
    let mut rewards = Vec::with_capacity(rollout_len);
    let mut log_probs = Vec::with_capacity(rollout_len);
    for t in 0..rollout_len {
        let (a, lp) = policy_sample(&agent.actor, &obs, rng, SampleMode::Stochastic)?;
        if t == 0 {
            first_action = a.clone();
        }
        let step = sim.step(&a, rng)?;
        rewards.push(step.reward);
        log_probs.push(lp);
        obs = step.obs;
    }
    Ok(Rollout {
        obs: first_obs,
        action: first_action,
        rewards,
        log_probs,
        start,
    })
}

pub fn critic_mean_at(critics: &CriticEnsembleNet, obs: &[f64], action: &[f64]) -> Result<f64> {
    let o = ndarray::ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| param_err("obs shape"))?;
    let a = ndarray::ArrayView2::from_shape((1, action.len()), action).map_err(|_| param_err("action shape"))?;
    Ok(critics.members_batch(critic_input(o, a).view(), false)?.mean[0])
}

/// Approximation error averaged over `n_starts` fresh starting states.
pub fn approx_error_metric(agent: &Agent, env: &Env, n_starts: usize, rollout_len: usize, rng: &mut RunRng) -> Result<f64> {
    if n_starts == 0 || rollout_len == 0 {
        return Err(param_err("n_starts and rollout_len must be positive"));
    }
    let (alpha, gamma) = (agent.alpha(), agent.config.gamma);
    let mut total = 0.0;
    for _ in 0..n_starts {
        let r = policy_rollout(agent, env, rollout_len, rng)?;
        let q = critic_mean_at(&agent.critics, &r.obs, &r.action)?;
        total += approx_error_from_rollout(q, &r.rewards, &r.log_probs, alpha, gamma);
    }
    Ok(total / n_starts as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_series_example() {
        let u = approx_error_from_rollout(0.0, &[1.0; 50], &[0.0; 50], 0.0, 0.99);
        assert!((u + 100.0).abs() < 1e-9);
        let q = (2.0 - 0.5 * -1.0) / (1.0 - 0.9);
        assert!(approx_error_from_rollout(q, &[2.0], &[-1.0], 0.5, 0.9).abs() < 1e-12);
    }

    #[test]
    fn csv_format_contract() {
        let mut row = MetricsRow::error_row(7);
        row.beta = 1.0 / 3.0;
        let line = row.to_csv_line();
        assert!(line.starts_with("7,NaN,3.33333333e-1,"));
        let back = MetricsRow::parse_csv_line(&line).unwrap();
        assert!(back.eval_return.is_nan());
        assert!((back.beta - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn overfit_ratio_cases() {
        let b = |q: f64| FrozenBatch {
            q_estimate: vec![q],
            reward: vec![0.0],
            next_mean: vec![0.0],
            next_std: vec![0.0],
            next_alpha_logp: vec![0.0],
            bootstrap: vec![1.0],
        };
        assert_eq!(overfit_ratio(&b(2.0), &b(4.0), 1.0, 0.9, false), 4.0);
        assert_eq!(overfit_ratio(&b(2.0), &b(2.0), 1.0, 0.9, false), 1.0);
        assert!(overfit_ratio(&b(0.0), &b(1.0), 1.0, 0.9, false).is_nan());
        assert_eq!(overfit_ratio(&b(2.0), &b(-4.0), 1.0, 0.9, true), -2.0);
    }
}
