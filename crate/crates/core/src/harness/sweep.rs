//! Multi-seed sweeps along one axis, with a bootstrap summary over seeds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::harness::metrics::{format_float, MetricsRow};
use crate::harness::run::run_experiment;
use crate::harness::ExperimentConfig;
use crate::pessimism::AdjusterKind;
use crate::rng::{stream, streams};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "value,runs,failures,mean,ci_low,ci_high";
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
/// Evaluation rows averaged into a run's final performance.
pub const FINAL_WINDOW: usize = 10;
pub const THREADS_ENV: &str = "PESSILAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ValidationRatio,
    PessimismLr,
    AblationGrid,
    Adjuster,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation_ratio" => Ok(Self::ValidationRatio),
            "pessimism_lr" => Ok(Self::PessimismLr),
            "ablation_grid" => Ok(Self::AblationGrid),
            "adjuster" => Ok(Self::Adjuster),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (validation_ratio, pessimism_lr, ablation_grid, adjuster)"
            ))),
        }
    }
}

/// Accepts plain decimals and fractions such as `1/32`.
fn parse_number(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("bad number `{s}`"));
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
            if d == 0.0 {
                return Err(bad());
            }
            Ok(n / d)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string())).map_err(|e| Error::Config(format!("`{s}`: {e}")))
}

/// Applies one axis value to a base config.
///
/// On the validation-ratio axis `regret:v` keeps a validation buffer of ratio
/// `v` but freezes β, so only routing differs from the `0` arm.
pub fn apply_axis_value(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::ValidationRatio => match value.strip_prefix("regret:") {
            Some(v) => {
                cfg.validation_ratio = parse_number(v)?;
                cfg.pessimism.adjuster = AdjusterKind::Fixed;
                cfg.pessimism.loss = None;
                cfg.pessimism.source = None;
            }
            None => cfg.validation_ratio = parse_number(value)?,
        },
        SweepAxis::PessimismLr => cfg.pessimism.lr = parse_number(value)?,
        SweepAxis::AblationGrid => {
            let (loss, source) = value
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("ablation value `{value}` must read loss:source")))?;
            cfg.pessimism.adjuster = AdjusterKind::Ablation;
            cfg.pessimism.loss = Some(parse_name(loss)?);
            cfg.pessimism.source = Some(parse_name(source)?);
        }
        SweepAxis::Adjuster => {
            cfg.pessimism.adjuster = parse_name(value)?;
            cfg.pessimism.loss = None;
            cfg.pessimism.source = None;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Directory-safe label for an axis value.
pub fn value_label(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepArm {
    pub value: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// The values × seeds cross product, values outermost.
pub fn sweep_arms(base: &ExperimentConfig, axis: SweepAxis, values: &[String], seeds: &[u64]) -> Result<Vec<SweepArm>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut arms = Vec::with_capacity(values.len() * seeds.len());
    for v in values {
        let cfg = apply_axis_value(base, axis, v)?;
        for &seed in seeds {
            arms.push(SweepArm {
                value: v.clone(),
                seed,
                config: ExperimentConfig { seed, ..cfg.clone() },
            });
        }
    }
    Ok(arms)
}

/// Mean evaluation return over the last ten evaluation rows.
pub fn final_performance(rows: &[MetricsRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|r| r.eval_return).sum::<f64>() / tail.len() as f64
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(samples: &[f64], resamples: usize, rng: &mut R) -> (f64, f64) {
    if samples.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every arm, each into `out_dir/<value>/seed<seed>/`, then writes
/// `summary.csv`. A failed run is logged and counted; the rest continue.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String], seeds: &[u64], out_dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut arms = sweep_arms(base, axis, values, seeds)?;
    std::fs::create_dir_all(out_dir)?;
    for arm in &mut arms {
        arm.config.output = Some(out_dir.join(value_label(&arm.value)).join(format!("seed{}", arm.seed)));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Internal(e.to_string()))?;
    let results: Vec<Option<f64>> = pool.install(|| {
        arms.par_iter()
            .map(|arm| match run_experiment(&arm.config) {
                Ok(rows) => Some(final_performance(&rows)),
                Err(e) => {
                    log::error!("value {} seed {} failed: {e}", arm.value, arm.seed);
                    None
                }
            })
            .collect()
    });

    let mut rng = stream(base.seed, streams::BOOTSTRAP);
    let mut summary = Vec::with_capacity(values.len());
    for v in values {
        let finals: Vec<Option<f64>> = arms.iter().zip(&results).filter(|(a, _)| &a.value == v).map(|(_, r)| *r).collect();
        let ok: Vec<f64> = finals.iter().flatten().copied().collect();
        let (ci_low, ci_high) = bootstrap_ci(&ok, BOOTSTRAP_RESAMPLES, &mut rng);
        summary.push(SummaryRow {
            value: v.clone(),
            runs: ok.len(),
            failures: finals.len() - ok.len(),
            mean: if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            },
            ci_low,
            ci_high,
        });
    }
    let mut out = BufWriter::new(File::create(out_dir.join(SUMMARY_FILE))?);
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in &summary {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.value,
            r.runs,
            r.failures,
            format_float(r.mean),
            format_float(r.ci_low),
            format_float(r.ci_high)
        )?;
    }
    out.flush()?;
    Ok(summary)
}
