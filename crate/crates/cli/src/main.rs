use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use curioflight::config::RunConfig;
use curioflight::harness;

#[derive(Parser)]
#[command(name = "curioflight", version, about = "Curiosity-driven quadrotor flight training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes log, learning curve, config copy and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Episode budget (overrides `training.episodes`).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint under attitude noise.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file (flat `key = value` lines); defaults to the config's scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Attitude noise standard deviations in degrees.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        noise_deg: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Roll out one episode and write its trajectory as CSV.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        noise_deg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Compare the DTW recursion with exhaustive path enumeration on two series.
    DtwOracle { a: PathBuf, b: PathBuf },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, episodes } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(n) = episodes {
                cfg.training.episodes = n;
            }
            let result = harness::cmd_train(&cfg)?;
            let successes = result
                .records
                .iter()
                .filter(|r| r.stats.termination == "goal_reached")
                .count();
            println!(
                "trained {} episodes ({} reached the goal); outputs in {}",
                result.records.len(),
                successes,
                cfg.output_dir.display()
            );
        }
        Command::Eval { config, checkpoint, scene, noise_deg, trials, seed, out } => {
            let cfg = load_config(config.as_ref())?;
            let report = harness::cmd_eval(&cfg, &checkpoint, scene.as_deref(), &noise_deg, trials, seed, &out)?;
            println!("noise_deg  position_error_m  average_reward  success_rate");
            for r in &report.rows {
                let pe = r.position_error.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:>9.2}  {:>16}  {:>14.4}  {:>11.1}%",
                    r.noise_deg,
                    pe,
                    r.average_reward,
                    100.0 * r.success_rate
                );
            }
            println!("report written to {}", out.display());
        }
        Command::Replay { config, checkpoint, scene, noise_deg, seed, out } => {
            let cfg = load_config(config.as_ref())?;
            let cause = harness::cmd_replay(&cfg, &checkpoint, scene.as_deref(), noise_deg, seed, &out)?;
            println!("episode ended with {}; trajectory in {}", cause.as_str(), out.display());
        }
        Command::DtwOracle { a, b } => {
            println!("{}", harness::cmd_dtw_oracle(&a, &b)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
