use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pessilab::harness::{evaluate_checkpoint, final_performance, run_experiment, sweep, ExperimentConfig, SweepAxis};
use pessilab::mdp::MdpSpec;
use pessilab::pessimism::AdjusterKind;
use pessilab::verify::verify_mdp;
use pessilab::Error;

#[derive(Parser)]
#[command(name = "pessilab", version, about = "Pessimistic actor-critic laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the error-calculus identities, fixed points and contraction on an MDP.
    Verify {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one agent and write metrics.csv and checkpoint.bin.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        adjuster: Option<String>,
        #[arg(long)]
        replay_ratio: Option<usize>,
        #[arg(long)]
        validation_ratio: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run a values × seeds grid along one axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. `1/128,1/32` or `dual:replay,vpl:validation`.
        #[arg(long)]
        values: String,
        /// `1..10` (inclusive) or a comma-separated list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a saved actor.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => "{}".into(),
        };
        ExperimentConfig::from_json(&text)
    }
}

enum Failure {
    Config(Error),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) => Failure::Config(e),
            e => Failure::Run(e),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("bad seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn read_mdp(path: &Path) -> Result<MdpSpec, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    MdpSpec::from_json(&text).map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Verify { mdp, trials, pairs, seed } => {
            let mdp = read_mdp(&mdp)?;
            let report = verify_mdp(&mdp, trials, pairs, seed).map_err(Failure::Run)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            if !report.passed {
                return Err(Failure::Run(Error::Certificate {
                    trial: trials,
                    ratio: report.contraction_max_ratio,
                    gamma: report.gamma,
                }));
            }
        }
        Command::Train {
            config,
            seed,
            out,
            adjuster,
            replay_ratio,
            validation_ratio,
            steps,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = Some(o);
            }
            if let Some(a) = adjuster {
                cfg.pessimism.adjuster = serde_json::from_value::<AdjusterKind>(serde_json::Value::String(a.clone()))
                    .map_err(|_| Error::Config(format!("unknown adjuster `{a}`")))?;
            }
            if let Some(r) = replay_ratio {
                cfg.agent.replay_ratio = r;
            }
            if let Some(v) = validation_ratio {
                cfg.validation_ratio = v;
            }
            if let Some(t) = steps {
                cfg.total_steps = Some(t);
            }
            cfg.validate()?;
            let rows = run_experiment(&cfg).map_err(Failure::Run)?;
            println!("final performance {}", final_performance(&rows));
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = config.load()?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            let seeds = parse_seeds(&seeds)?;
            let summary = sweep(&cfg, axis, &values, &seeds, &out)?;
            for r in &summary {
                println!(
                    "{}: mean {:.3} [{:.3}, {:.3}] over {} runs ({} failed)",
                    r.value, r.mean, r.ci_low, r.ci_high, r.runs, r.failures
                );
            }
            if summary.iter().any(|r| r.failures > 0) {
                return Err(Failure::Run(Error::Internal("some sweep runs failed".into())));
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let ret = evaluate_checkpoint(&checkpoint, episodes, seed)?;
            println!("mean return {ret}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
