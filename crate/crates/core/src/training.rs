//! Records shared by both trainers: per-episode summaries (learning curves)
//! and per-update statistics (training log).

use crate::env::EpisodeEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    /// 1-based index of the finished episode.
    pub episode: usize,
    pub trial_index: usize,
    pub steps: usize,
    /// Environment steps taken so far, including this episode.
    pub total_steps: usize,
    pub reward: f64,
    /// Terminal event; `Ongoing` when cut at the time horizon.
    pub event: EpisodeEvent,
}

/// One row of the training log. Fields an algorithm does not produce are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub update: usize,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub mean_ratio: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub value_loss: f64,
    pub policy_loss: f64,
}

pub const TRAIN_LOG_HEADER: &str = "update,episodes,mean_episode_reward,mean_ratio,clip_fraction,value_loss,policy_loss";
pub const CURVE_HEADER: &str = "episode,steps,total_steps,reward,event";

impl UpdateStats {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.update,
            self.episodes,
            self.mean_episode_reward,
            opt(self.mean_ratio),
            opt(self.clip_fraction),
            self.value_loss,
            self.policy_loss
        )
    }
}

impl EpisodeSummary {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.episode, self.steps, self.total_steps, self.reward, self.event)
    }
}

/// Episode index (1-based) at which the trailing `window`-episode mean reward
/// first covers 90% of the way from its initial level to its final level.
///
/// Returns `None` when the curve is shorter than `window` or never improved.
pub fn convergence_episode(rewards: &[f64], window: usize) -> Option<usize> {
    if window == 0 || rewards.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let trailing: Vec<f64> = rewards.windows(window).map(mean).collect();
    let initial = trailing[0];
    let fin = trailing[trailing.len() - 1];
    if !(fin > initial) {
        return None;
    }
    let target = initial + 0.9 * (fin - initial);
    trailing.iter().position(|&m| m >= target).map(|i| i + window)
}
