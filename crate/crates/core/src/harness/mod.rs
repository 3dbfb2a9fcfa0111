//! Experiment orchestration behind the command-line tool: trial generation,
//! training runs with learning curves and checkpoints, deterministic
//! evaluation, and report comparison.

mod config;
mod eval;

pub use config::{Algorithm, Overrides, RunConfig, RunSection, TrialSection};
pub use eval::{compare, evaluate, write_episode_csv, Comparison, EvalPolicy, EvalReport, EpisodeRecord, TrialOutcome, EPISODE_CSV_HEADER};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ddpg::DdpgTrainer;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::ppo::PpoTrainer;
use crate::training::{convergence_episode, EpisodeSummary, UpdateStats, CURVE_HEADER, TRAIN_LOG_HEADER};
use crate::trial::{generate_synthetic_trial, load_trials, save_trials, split_trials, SynthParams, Trial};

/// Generates `count` synthetic trials named `trial_00000`, `trial_00001`, ...
pub fn synthesize_trials(params: &SynthParams, count: usize, seed: u64) -> Result<Vec<Trial>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut t = generate_synthetic_trial(&mut rng, params)?;
            t.id = format!("trial_{i:05}");
            Ok(t)
        })
        .collect()
}

/// Writes `count` trials plus a `manifest.toml` recording the seed and parameters.
pub fn gen_trials(params: &SynthParams, count: usize, seed: u64, out: &Path) -> Result<Vec<Trial>> {
    let trials = synthesize_trials(params, count, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_trials(&trials, out)?;
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        count: usize,
        seed: u64,
        synth: &'a SynthParams,
    }
    let manifest = toml::to_string(&Manifest { count, seed, synth: params }).expect("manifest serializes");
    let path = out.join("manifest.toml");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(trials)
}

/// Loads or synthesizes the configured trials and splits them into (train, test).
pub fn resolve_trials(cfg: &RunConfig) -> Result<(Vec<Trial>, Vec<Trial>)> {
    let all = match (&cfg.trials.dir, cfg.trials.synthetic_count) {
        (Some(dir), None) => load_trials(dir)?,
        (None, Some(n)) => synthesize_trials(&cfg.synth, n, cfg.trials.synthetic_seed)?,
        _ => return Err(Error::Config("exactly one trial source must be configured".into())),
    };
    split_trials(all, cfg.trials.split_fraction, cfg.trials.split_seed)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EpisodeSummary>,
    pub log: Vec<UpdateStats>,
    pub checkpoint: Checkpoint,
    pub convergence_episode: Option<usize>,
    pub out_dir: PathBuf,
}

/// Trailing window used for the convergence report.
pub const CONVERGENCE_WINDOW: usize = 100;

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains the configured agent and writes the run directory:
/// `manifest.toml`, `curve.csv`, `train_log.csv`, `test_trials.txt`,
/// `summary.txt`, `checkpoint_ep<N>.ckpt` and `checkpoint_final.ckpt`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = resolve_trials(cfg)?;
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("manifest.toml"), &cfg.manifest())?;
    let ids: String = test_set.iter().map(|t| format!("{}\n", t.id)).collect();
    write(&out.join("test_trials.txt"), &ids)?;

    let max_episodes = cfg.run.episodes.unwrap_or(usize::MAX);
    let max_steps = cfg.run.env_steps.unwrap_or(usize::MAX);
    let every = cfg.run.checkpoint_every;
    let mut curve = Vec::new();
    let mut log = Vec::new();
    let mut next_checkpoint = every;
    let mut save_periodic = |done: usize, ckpt: &dyn Fn() -> Checkpoint| -> Result<()> {
        while every > 0 && done >= next_checkpoint {
            ckpt().save(out.join(format!("checkpoint_ep{next_checkpoint}.ckpt")))?;
            next_checkpoint += every;
        }
        Ok(())
    };

    let checkpoint = match cfg.run.algorithm {
        Algorithm::Ppo => {
            let mut trainer = PpoTrainer::new(cfg.ppo.clone(), cfg.env.clone(), &train_set, cfg.run.seed)?;
            let mut steps = 0usize;
            while trainer.episodes_done() < max_episodes && steps < max_steps {
                let it = trainer.iterate(max_episodes)?;
                let progressed = !it.episodes.is_empty() || it.update.is_some();
                if let Some(last) = it.episodes.last() {
                    steps = last.total_steps;
                }
                curve.extend(it.episodes);
                if let Some((stats, _)) = it.update {
                    log.push(stats);
                }
                save_periodic(trainer.episodes_done(), &|| trainer.agent.to_checkpoint())?;
                if !progressed {
                    break;
                }
            }
            trainer.agent.to_checkpoint()
        }
        Algorithm::Ddpg => {
            let mut trainer = DdpgTrainer::new(cfg.ddpg.clone(), cfg.env.clone(), &train_set, cfg.run.seed)?;
            while trainer.episodes_done() < max_episodes && trainer.total_steps() < max_steps {
                curve.push(trainer.run_episode(max_steps)?);
                log.extend(trainer.drain_log());
                save_periodic(trainer.episodes_done(), &|| trainer.agent.nets.to_checkpoint())?;
            }
            trainer.flush_log();
            log.extend(trainer.drain_log());
            trainer.agent.nets.to_checkpoint()
        }
    };
    checkpoint.save(out.join("checkpoint_final.ckpt"))?;

    let mut curve_csv = format!("{CURVE_HEADER}\n");
    for e in &curve {
        writeln!(curve_csv, "{}", e.csv_row()).unwrap();
    }
    write(&out.join("curve.csv"), &curve_csv)?;
    let mut log_csv = format!("{TRAIN_LOG_HEADER}\n");
    for s in &log {
        writeln!(log_csv, "{}", s.csv_row()).unwrap();
    }
    write(&out.join("train_log.csv"), &log_csv)?;

    let rewards: Vec<f64> = curve.iter().map(|e| e.reward).collect();
    let convergence = convergence_episode(&rewards, CONVERGENCE_WINDOW);
    let final_mean = if rewards.is_empty() {
        f64::NAN
    } else {
        let tail = &rewards[rewards.len().saturating_sub(CONVERGENCE_WINDOW)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let summary = format!(
        "episodes={}\nenv_steps={}\nupdates={}\nfinal_mean_reward={}\nconvergence_episode={}\n",
        curve.len(),
        curve.last().map_or(0, |e| e.total_steps),
        log.len(),
        final_mean,
        convergence.map_or_else(|| "none".to_string(), |c| c.to_string()),
    );
    write(&out.join("summary.txt"), &summary)?;

    Ok(TrainOutcome {
        curve,
        log,
        checkpoint,
        convergence_episode: convergence,
        out_dir: out,
    })
}
