use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ddpg::{squash, ActorCritic};
use crate::env::{BrakingEnv, EnvConfig, EpisodeEvent, Observation};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Network};
use crate::ppo::{GaussianPolicy, PpoAgent};
use crate::trial::Trial;

/// Noise-free policies used for evaluation.
#[derive(Debug, Clone)]
pub enum EvalPolicy {
    /// Gaussian mean, clamped.
    Ppo(GaussianPolicy),
    /// Squashed actor output.
    Ddpg(Network),
    Constant(f64),
}

impl EvalPolicy {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        match c.meta.get("algo").map(String::as_str) {
            Some("ppo") => Ok(EvalPolicy::Ppo(PpoAgent::policy_from_checkpoint(c)?)),
            Some("ddpg") => Ok(EvalPolicy::Ddpg(ActorCritic::actor_from_checkpoint(c)?)),
            other => Err(Error::Shape(format!("checkpoint algorithm {other:?} not recognized"))),
        }
    }

    pub fn act(&self, obs: &Observation) -> Result<f64> {
        match self {
            EvalPolicy::Ppo(p) => p.deterministic_action(obs),
            EvalPolicy::Ddpg(actor) => Ok(squash(actor.predict_one(obs.as_slice())?[0])),
            EvalPolicy::Constant(a) => Ok(*a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub pos_x: f64,
    pub v: f64,
    pub action: f64,
    pub jerk: f64,
    pub reward: f64,
    pub event: EpisodeEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trial_id: String,
    pub steps: Vec<StepRecord>,
    pub event: EpisodeEvent,
    /// Pedestrian x minus vehicle x at the end of the episode.
    pub final_gap: f64,
}

pub const EPISODE_CSV_HEADER: &str = "step,t,pos_x,v,action,jerk,reward,event";

pub fn write_episode_csv(record: &EpisodeRecord, path: &Path) -> Result<()> {
    let mut s = format!("{EPISODE_CSV_HEADER}\n");
    for r in &record.steps {
        writeln!(s, "{},{},{},{},{},{},{},{}", r.step, r.t, r.pos_x, r.v, r.action, r.jerk, r.reward, r.event).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn run_episode(policy: &EvalPolicy, trial: &Trial, env_config: &EnvConfig) -> Result<EpisodeRecord> {
    let (mut env, mut obs) = BrakingEnv::reset(trial, env_config)?;
    let mut steps = Vec::new();
    loop {
        let result = env.step(policy.act(&obs)?)?;
        let i = result.info;
        steps.push(StepRecord {
            step: i.step,
            t: i.t,
            pos_x: i.pos_x,
            v: i.v,
            action: i.action,
            jerk: i.jerk,
            reward: result.reward,
            event: result.event,
        });
        obs = result.observation;
        if result.event.is_terminal() {
            let ped_x = trial.frame_at(env.steps()).ped_x;
            return Ok(EpisodeRecord {
                trial_id: trial.id.clone(),
                event: result.event,
                final_gap: ped_x - env.vehicle().pos_x,
                steps,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub event: EpisodeEvent,
    pub steps: usize,
    pub reward: f64,
    pub mean_abs_jerk: f64,
    pub max_abs_jerk: f64,
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub accidents: usize,
    pub events: BTreeMap<EpisodeEvent, usize>,
    /// Mean of |jerk| over every step of every episode.
    pub mean_abs_jerk: f64,
    pub max_abs_jerk: f64,
    pub mean_episode_reward: f64,
    /// Remaining gap to the pedestrian in episodes ending with Stop.
    pub stop_gap_mean: Option<f64>,
    pub stop_gap_min: Option<f64>,
    pub per_trial: Vec<TrialOutcome>,
}

impl EvalReport {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let mut events: BTreeMap<EpisodeEvent, usize> = EpisodeEvent::TERMINAL.iter().map(|&e| (e, 0)).collect();
        let (mut jerk_sum, mut jerk_max, mut n_steps, mut reward_sum) = (0.0, 0.0f64, 0usize, 0.0);
        let mut per_trial = Vec::with_capacity(records.len());
        let mut stop_gaps = Vec::new();
        for r in records {
            *events.entry(r.event).or_default() += 1;
            let abs: Vec<f64> = r.steps.iter().map(|s| s.jerk.abs()).collect();
            let ep_sum: f64 = abs.iter().sum();
            let ep_max = abs.iter().copied().fold(0.0, f64::max);
            let reward: f64 = r.steps.iter().map(|s| s.reward).sum();
            jerk_sum += ep_sum;
            jerk_max = jerk_max.max(ep_max);
            n_steps += abs.len();
            reward_sum += reward;
            if r.event == EpisodeEvent::Stop {
                stop_gaps.push(r.final_gap);
            }
            per_trial.push(TrialOutcome {
                trial_id: r.trial_id.clone(),
                event: r.event,
                steps: abs.len(),
                reward,
                mean_abs_jerk: if abs.is_empty() { 0.0 } else { ep_sum / abs.len() as f64 },
                max_abs_jerk: ep_max,
                final_gap: r.final_gap,
            });
        }
        let n = records.len();
        EvalReport {
            episodes: n,
            accidents: events[&EpisodeEvent::Accident],
            events,
            mean_abs_jerk: if n_steps == 0 { 0.0 } else { jerk_sum / n_steps as f64 },
            max_abs_jerk: jerk_max,
            mean_episode_reward: if n == 0 { 0.0 } else { reward_sum / n as f64 },
            stop_gap_mean: (!stop_gaps.is_empty()).then(|| stop_gaps.iter().sum::<f64>() / stop_gaps.len() as f64),
            stop_gap_min: stop_gaps.iter().copied().reduce(f64::min),
            per_trial,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Deterministic rollouts over `trials`. When `out` is given, writes one
/// `episodes/<trial_id>.csv` per episode and `report.json`.
pub fn evaluate(policy: &EvalPolicy, trials: &[Trial], env_config: &EnvConfig, out: Option<&Path>) -> Result<(EvalReport, Vec<EpisodeRecord>)> {
    if trials.is_empty() {
        return Err(Error::Empty("no evaluation trials".into()));
    }
    env_config.validate()?;
    let records = trials
        .iter()
        .map(|t| run_episode(policy, t, env_config))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_records(&records);
    if let Some(out) = out {
        let dir = out.join("episodes");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for r in &records {
            write_episode_csv(r, &dir.join(format!("{}.csv", r.trial_id)))?;
        }
        let path = out.join("report.json");
        fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    Ok((report, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Mean |jerk| of A divided by that of B.
    pub jerk_ratio: f64,
    pub accidents: (usize, usize),
    pub events: (BTreeMap<EpisodeEvent, usize>, BTreeMap<EpisodeEvent, usize>),
    /// Per trial: (id, mean |jerk| of A minus that of B).
    pub paired_jerk_differences: Vec<(String, f64)>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "jerk_ratio={}", self.jerk_ratio).unwrap();
        writeln!(s, "accidents_a={}\naccidents_b={}", self.accidents.0, self.accidents.1).unwrap();
        for (label, ev) in [("a", &self.events.0), ("b", &self.events.1)] {
            for (e, n) in ev {
                writeln!(s, "events_{label}.{e}={n}").unwrap();
            }
        }
        let diffs = &self.paired_jerk_differences;
        let mean = diffs.iter().map(|d| d.1).sum::<f64>() / diffs.len().max(1) as f64;
        writeln!(s, "mean_paired_jerk_difference={mean}").unwrap();
        for (id, d) in diffs {
            writeln!(s, "paired_jerk_difference.{id}={d}").unwrap();
        }
        s
    }
}

pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let ids = |r: &EvalReport| r.per_trial.iter().map(|t| t.trial_id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::InvalidParams("reports cover different trial sets".into()));
    }
    Ok(Comparison {
        jerk_ratio: a.mean_abs_jerk / b.mean_abs_jerk,
        accidents: (a.accidents, b.accidents),
        events: (a.events.clone(), b.events.clone()),
        paired_jerk_differences: a
            .per_trial
            .iter()
            .zip(&b.per_trial)
            .map(|(x, y)| (x.trial_id.clone(), x.mean_abs_jerk - y.mean_abs_jerk))
            .collect(),
    })
}
