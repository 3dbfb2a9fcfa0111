//! Run configuration: a flat `key = value` file with `[section]` headers
//! (parsed as TOML), overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddpg::DdpgConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::trial::SynthParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Ddpg,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "ddpg" => Ok(Algorithm::Ddpg),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected ppo or ddpg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algorithm: Algorithm,
    /// Includes the jerk penalty when set; otherwise `mu` is forced to 0.
    pub comfort: bool,
    pub seed: u64,
    /// Episode budget; PPO default 3000, unlimited for DDPG unless set.
    pub episodes: Option<usize>,
    /// Environment-step budget; DDPG default 200000, unlimited for PPO unless set.
    pub env_steps: Option<usize>,
    /// Write an intermediate checkpoint every this many episodes (0 disables).
    pub checkpoint_every: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            comfort: true,
            seed: 0,
            episodes: None,
            env_steps: None,
            checkpoint_every: 1000,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSection {
    /// Directory of trial CSV files.
    pub dir: Option<PathBuf>,
    /// Number of synthetic trials to generate instead.
    pub synthetic_count: Option<usize>,
    pub synthetic_seed: u64,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrialSection {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic_count: None,
            synthetic_seed: 0,
            split_fraction: 0.8,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub trials: TrialSection,
    pub synth: SynthParams,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
}

/// Overrides taken from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub comfort: Option<bool>,
    pub episodes: Option<usize>,
}

pub const DEFAULT_PPO_EPISODES: usize = 3000;
pub const DEFAULT_DDPG_ENV_STEPS: usize = 200_000;

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, resolves budgets and the comfort weight, and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(out) = &o.out {
            self.run.out = out.clone();
        }
        if let Some(a) = o.algorithm {
            self.run.algorithm = a;
        }
        if let Some(c) = o.comfort {
            self.run.comfort = c;
        }
        if let Some(e) = o.episodes {
            self.run.episodes = Some(e);
        }
        self.env.mu = if !self.run.comfort {
            0.0
        } else if self.env.mu > 0.0 {
            self.env.mu
        } else {
            EnvConfig::default().mu
        };
        match self.run.algorithm {
            Algorithm::Ppo if self.run.episodes.is_none() && self.run.env_steps.is_none() => {
                self.run.episodes = Some(DEFAULT_PPO_EPISODES)
            }
            Algorithm::Ddpg if self.run.episodes.is_none() && self.run.env_steps.is_none() => {
                self.run.env_steps = Some(DEFAULT_DDPG_ENV_STEPS)
            }
            _ => {}
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.trials.dir, self.trials.synthetic_count) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "exactly one of trials.dir and trials.synthetic_count must be set".into(),
                ))
            }
        }
        if !(self.trials.split_fraction > 0.0 && self.trials.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "trials.split_fraction {} must lie strictly between 0 and 1",
                self.trials.split_fraction
            )));
        }
        if self.run.comfort != (self.env.mu > 0.0) {
            return Err(Error::Config("env.mu inconsistent with run.comfort".into()));
        }
        self.env.validate()?;
        if self.trials.synthetic_count.is_some() {
            self.synth.validate()?;
        }
        match self.run.algorithm {
            Algorithm::Ppo => self.ppo.validate(),
            Algorithm::Ddpg => self.ddpg.validate(),
        }
    }

    /// Every effective setting, in the same format the loader accepts.
    pub fn manifest(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_text("[trials]\nsynthetic_count = 10\n").unwrap()
    }

    #[test]
    fn defaults_reproduce_reported_ppo_settings() {
        let cfg = base().resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.run.algorithm, Algorithm::Ppo);
        assert_eq!(cfg.run.episodes, Some(3000));
        assert_eq!(cfg.env.mu, 0.01);
        assert_eq!((cfg.env.eta, cfg.env.beta), (0.1, 0.01));
        assert_eq!((cfg.ppo.batch_size, cfg.ppo.buffer_size, cfg.ppo.time_horizon), (64, 10240, 1024));
        assert_eq!((cfg.ppo.learning_rate, cfg.ppo.gamma), (1e-3, 0.99));
        let m = cfg.manifest();
        for needle in ["mu = 0.01", "buffer_size = 10240", "learning_rate = 0.001", "clip_epsilon = 0.2"] {
            assert!(m.contains(needle), "manifest lacks {needle}:\n{m}");
        }
        assert_eq!(RunConfig::from_text(&m).unwrap(), cfg);
    }

    #[test]
    fn comfort_off_zeroes_mu() {
        let o = Overrides { comfort: Some(false), ..Default::default() };
        assert_eq!(base().resolve(&o).unwrap().env.mu, 0.0);
    }

    #[test]
    fn ddpg_defaults() {
        let o = Overrides { algorithm: Some(Algorithm::Ddpg), ..Default::default() };
        let cfg = base().resolve(&o).unwrap();
        assert_eq!(cfg.run.env_steps, Some(200_000));
        assert_eq!((cfg.ddpg.minibatch, cfg.ddpg.tau, cfg.ddpg.actor_lr), (128, 1e-3, 1e-4));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { seed: Some(9), episodes: Some(5), out: Some("x".into()), ..Default::default() };
        let cfg = base().resolve(&o).unwrap();
        assert_eq!((cfg.run.seed, cfg.run.episodes), (9, Some(5)));
        assert_eq!(cfg.run.out, PathBuf::from("x"));
    }

    #[test]
    fn bad_configs_fail() {
        assert!(RunConfig::from_text("[run]\nbogus = 1\n").is_err());
        assert!(RunConfig::default().resolve(&Overrides::default()).is_err());
        let both = RunConfig::from_text("[trials]\nsynthetic_count = 3\ndir = \"d\"\n").unwrap();
        assert!(both.resolve(&Overrides::default()).is_err());
        let neg = RunConfig::from_text("[trials]\nsynthetic_count = 3\n[env]\nd_max = -1.0\n").unwrap();
        assert!(neg.resolve(&Overrides::default()).is_err());
    }
}
