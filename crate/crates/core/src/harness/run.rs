use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::agent::{Batch, Trainer, Transition};
use crate::env::Env;
use crate::error::{param_err, Error, Result};
use crate::harness::metrics::{approx_error_metric, overfit_metric, MetricsRow, MetricsWriter};
use crate::harness::tabular::tabular_approx_error;
use crate::harness::ExperimentConfig;
use crate::nn::{policy_sample, Blob, Checkpoint, GaussianPolicyHead, SampleMode};
use crate::rng::{stream, streams, RunRng};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Greedy episodes; returns the mean undiscounted return and the visited
/// transitions.
pub fn evaluate_collect(head: &GaussianPolicyHead, env: &Env, episodes: usize, rng: &mut RunRng) -> Result<(f64, Vec<Transition>)> {
    if episodes == 0 {
        return Err(param_err("evaluation needs at least one episode"));
    }
    let mut sim = env.clone();
    let mut total = 0.0;
    let mut transitions = Vec::with_capacity(episodes * sim.episode_length());
    for _ in 0..episodes {
        let mut obs = sim.reset(rng);
        loop {
            let (a, _) = policy_sample(head, &obs, rng, SampleMode::Greedy)?;
            let step = sim.step(&a, rng)?;
            total += step.reward;
            let done = step.terminal || step.truncated;
            transitions.push(Transition {
                id: transitions.len() as u64,
                obs,
                action: a,
                reward: step.reward,
                next_obs: step.obs.clone(),
                terminal: step.terminal,
            });
            if done {
                break;
            }
            obs = step.obs;
        }
    }
    Ok((total / episodes as f64, transitions))
}

pub fn evaluate(head: &GaussianPolicyHead, env: &Env, episodes: usize, rng: &mut RunRng) -> Result<f64> {
    Ok(evaluate_collect(head, env, episodes, rng)?.0)
}

struct RunState {
    last_loss: f64,
    last_disagreement: f64,
}

fn measure(
    cfg: &ExperimentConfig,
    trainer: &Trainer,
    eval_env: &Env,
    state: &RunState,
    eval_rng: &mut RunRng,
    metrics_rng: &mut RunRng,
    started: Instant,
) -> Result<MetricsRow> {
    let agent = &trainer.agent;
    let (eval_return, eval_transitions) = evaluate_collect(&agent.actor, eval_env, cfg.eval_episodes, eval_rng)?;
    if matches!(eval_env, Env::Tabular(_)) && log::log_enabled!(log::Level::Debug) {
        // A clone of the metrics stream replays the same starts without
        // advancing it, so logging never changes the CSV.
        let side = tabular_approx_error(
            agent,
            eval_env,
            cfg.metrics.approx_starts,
            cfg.metrics.approx_rollout_len,
            &mut metrics_rng.clone(),
        )?;
        log::debug!(
            "step {}: approx error {:.4} (rollout formula), {:.4} (exact), formula gap {:.4}",
            trainer.env_steps(),
            side.metric,
            side.exact,
            side.formula_gap
        );
    }
    let approx_error = approx_error_metric(
        agent,
        eval_env,
        cfg.metrics.approx_starts,
        cfg.metrics.approx_rollout_len,
        metrics_rng,
    )?;

    let mb = cfg.metrics.batch_size.unwrap_or(agent.config.batch_size);
    let train = trainer.train_buffer.sample(mb, metrics_rng);
    // Held-out transitions: the validation buffer when one is kept, otherwise
    // the transitions of this evaluation. The two are never mixed.
    let val = if cfg.validation_ratio > 0.0 {
        trainer.validation_buffer.sample(mb, metrics_rng)
    } else if eval_transitions.is_empty() {
        None
    } else {
        let picks: Vec<Transition> = (0..mb)
            .map(|_| eval_transitions[metrics_rng.gen_range(0..eval_transitions.len())].clone())
            .collect();
        Some(Batch::from_transitions(&picks, eval_env.obs_dim(), eval_env.action_dim())?)
    };
    let overfit_ratio = match (train, val) {
        (Some(t), Some(v)) => overfit_metric(
            &agent.critics,
            &agent.actor,
            trainer.beta(),
            agent.alpha(),
            agent.config.gamma,
            &t,
            &v,
            cfg.metrics.signed_overfit,
            metrics_rng,
        )?,
        _ => f64::NAN,
    };
    Ok(MetricsRow {
        step: trainer.env_steps(),
        eval_return,
        beta: trainer.beta(),
        alpha: trainer.alpha(),
        critic_disagreement: state.last_disagreement,
        approx_error,
        overfit_ratio,
        critic_loss: state.last_loss,
        wall_ms: if cfg.metrics.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            f64::NAN
        },
    })
}

/// Runs one experiment end to end. With an output directory, metrics are
/// streamed to `metrics.csv` and the final parameters saved to
/// `checkpoint.bin`. On failure an all-NaN row marks the abort point.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let mut writer = match &cfg.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(MetricsWriter::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let total = cfg.total_steps();
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut env = cfg.env.build()?;
    let eval_env = env.clone();
    let mut trainer = Trainer::new(cfg.agent.clone(), &cfg.pessimism, cfg.validation_ratio, total, &mut env, cfg.seed)?;
    let mut eval_rng = stream(cfg.seed, streams::EVAL);
    let mut metrics_rng = stream(cfg.seed, streams::METRICS);
    let started = Instant::now();
    let mut state = RunState {
        last_loss: f64::NAN,
        last_disagreement: f64::NAN,
    };
    let mut rows = Vec::with_capacity(total / cfg.eval_every);

    for step in 1..=total {
        let result = (|| -> Result<Option<MetricsRow>> {
            if cfg.reset_every > 0 && step > 1 && (step - 1) % cfg.reset_every == 0 {
                trainer.reset_parameters();
            }
            let report = trainer.train_step(&mut env)?;
            if let Some(l) = report.critic_loss {
                state.last_loss = l;
            }
            if let Some(d) = report.critic_disagreement {
                state.last_disagreement = d;
            }
            if step % cfg.eval_every == 0 {
                let row = measure(cfg, &trainer, &eval_env, &state, &mut eval_rng, &mut metrics_rng, started)?;
                log::info!(
                    "seed {} step {}: return {:.2}, beta {:.4}, alpha {:.4}",
                    cfg.seed,
                    row.step,
                    row.eval_return,
                    row.beta,
                    row.alpha
                );
                return Ok(Some(row));
            }
            Ok(None)
        })();
        match result {
            Ok(Some(row)) => {
                if let Some(w) = writer.as_mut() {
                    w.write_row(&row)?;
                }
                rows.push(row);
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("run aborted at step {step}: {e}");
                if let Some(w) = writer.as_mut() {
                    w.write_row(&MetricsRow::error_row(step as u64))?;
                }
                return Err(e);
            }
        }
    }
    if let Some(dir) = &cfg.output {
        save_checkpoint(cfg, &trainer, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(rows)
}

pub fn save_checkpoint(cfg: &ExperimentConfig, trainer: &Trainer, path: &Path) -> Result<()> {
    let agent = &trainer.agent;
    let mut blobs = vec![Blob {
        name: "actor".into(),
        spec: agent.actor.spec.clone(),
        params: agent.actor.params.clone(),
    }];
    for (i, (o, t)) in agent.critics.online.iter().zip(&agent.critics.target).enumerate() {
        blobs.push(Blob {
            name: format!("critic{i}"),
            spec: agent.critics.spec.clone(),
            params: o.clone(),
        });
        blobs.push(Blob {
            name: format!("target{i}"),
            spec: agent.critics.spec.clone(),
            params: t.clone(),
        });
    }
    let meta = serde_json::json!({
        "config": cfg,
        "beta": trainer.beta(),
        "log_alpha": agent.temperature.log_alpha,
        "env_steps": trainer.env_steps(),
    });
    Checkpoint { meta, blobs }.write(path)
}

/// Greedy evaluation of a saved actor on the environment it was trained on.
pub fn evaluate_checkpoint(path: &Path, episodes: usize, seed: u64) -> Result<f64> {
    let ck = Checkpoint::read(path)?;
    let cfg: ExperimentConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or_default())
        .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let actor = ck.blob("actor").ok_or_else(|| Error::Config("checkpoint has no actor".into()))?;
    let head = GaussianPolicyHead::from_parts(actor.spec.clone(), actor.params.clone())?;
    let env = cfg.env.build()?;
    evaluate(&head, &env, episodes, &mut stream(seed, streams::EVAL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            total_steps: Some(400),
            eval_every: 200,
            eval_episodes: 1,
            agent: AgentConfig {
                batch_size: 16,
                hidden_sizes: vec![8, 8],
                initial_random_steps: 100,
                ..Default::default()
            },
            metrics: crate::harness::MetricsConfig {
                approx_rollout_len: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            total_steps: Some(0),
            output: Some(dir.path().to_path_buf()),
            ..quick()
        };
        assert!(run_experiment(&cfg).unwrap().is_empty());
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text, format!("{}\n", crate::harness::METRICS_HEADER));
    }

    #[test]
    fn rows_at_eval_cadence_and_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output: Some(dir.path().to_path_buf()),
            ..quick()
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![200, 400]);
        assert!(rows.iter().all(|r| r.eval_return < 0.0 && r.wall_ms.is_nan()));
        let back = crate::harness::read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(back.len(), 2);
        let r = evaluate_checkpoint(&dir.path().join(CHECKPOINT_FILE), 1, 0).unwrap();
        assert!(r.is_finite() && r < 0.0);
    }

    #[test]
    fn zero_torque_pendulum_return_is_negative() {
        let env = crate::env::EnvConfig::default().build().unwrap();
        let spec = crate::nn::MlpSpec::new(vec![3, 4, 2], crate::nn::Activation::Relu).unwrap();
        let head = GaussianPolicyHead::from_parts(spec.clone(), crate::nn::ParamVector::zeros(spec.n_params())).unwrap();
        let mut rng = stream(0, 0);
        let (ret, ts) = evaluate_collect(&head, &env, 2, &mut rng).unwrap();
        assert!(ret < 0.0);
        assert_eq!(ts.len(), 400);
    }
}
