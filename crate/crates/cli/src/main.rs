//! `autobrake` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use autobrake::harness::{self, Algorithm, EvalPolicy, EvalReport, Overrides, RunConfig};
use autobrake::nn::Checkpoint;
use autobrake::trial::{load_trials, SynthParams};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "autobrake", version, about = "Train and evaluate learned braking policies for pedestrian crossings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic crossing trials.
    GenTrials {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Run config whose [synth] section supplies generator parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a PPO or DDPG agent.
    Train(RunArgs),
    /// Evaluate a checkpoint on held-out trials with the noise-free policy.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate every trial in this directory instead of the configured test split.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Compare two evaluation reports (A relative to B).
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Also write the summary to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long, value_enum)]
    comfort: Option<Toggle>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ppo,
    Ddpg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            algorithm: self.algo.map(|a| match a {
                AlgoArg::Ppo => Algorithm::Ppo,
                AlgoArg::Ddpg => Algorithm::Ddpg,
            }),
            comfort: self.comfort.map(|c| matches!(c, Toggle::On)),
            episodes: self.episodes,
        };
        Ok(cfg.resolve(&overrides)?)
    }
}

fn synth_params(config: Option<&Path>) -> Result<SynthParams> {
    Ok(match config {
        Some(p) => RunConfig::load(p)?.synth,
        None => SynthParams::default(),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTrials { count, seed, out, config } => {
            let params = synth_params(config.as_deref())?;
            harness::gen_trials(&params, count, seed, &out)?;
            println!("wrote {count} trials to {}", out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let outcome = harness::train(&cfg)?;
            let last = outcome.curve.last();
            println!(
                "trained {} for {} episodes ({} env steps); outputs in {}",
                match cfg.run.algorithm {
                    Algorithm::Ppo => "ppo",
                    Algorithm::Ddpg => "ddpg",
                },
                outcome.curve.len(),
                last.map_or(0, |e| e.total_steps),
                outcome.out_dir.display()
            );
        }
        Command::Eval { run, checkpoint, trials } => {
            let cfg = run.resolve()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let policy = EvalPolicy::from_checkpoint(&ckpt)?;
            let test = match &trials {
                Some(dir) => load_trials(dir)?,
                None => harness::resolve_trials(&cfg)?.1,
            };
            if test.is_empty() {
                bail!("no evaluation trials");
            }
            let (report, _) = harness::evaluate(&policy, &test, &cfg.env, Some(&cfg.run.out))?;
            println!(
                "episodes={} accidents={} mean_abs_jerk={} mean_episode_reward={}",
                report.episodes, report.accidents, report.mean_abs_jerk, report.mean_episode_reward
            );
        }
        Command::Compare { report_a, report_b, out } => {
            let a = EvalReport::load(&report_a)?;
            let b = EvalReport::load(&report_b)?;
            let text = harness::compare(&a, &b)?.to_text();
            if let Some(out) = out {
                std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{text}");
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
