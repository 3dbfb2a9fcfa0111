//! Clipped-surrogate policy optimization over a Gaussian brake policy.
//!
//! The policy samples an unbounded raw action `N(mean(obs), exp(log_std))`;
//! the environment receives it clamped to [0, 1]. Log-probabilities always
//! refer to the raw (pre-clamp) action.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{BrakingEnv, EnvConfig, EpisodeEvent, Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Checkpoint, Network};
use crate::training::{EpisodeSummary, UpdateStats};
use crate::trial::Trial;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub batch_size: usize,
    pub buffer_size: usize,
    pub time_horizon: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub hidden_layers: Vec<usize>,
    /// Initial exploration spread, log of the standard deviation.
    pub init_log_std: f64,
    /// Constant added to the mean network output; centres the fresh policy mid-brake.
    pub action_center: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            buffer_size: 10240,
            time_horizon: 1024,
            learning_rate: 1e-3,
            gamma: 0.99,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            epochs_per_update: 3,
            entropy_coeff: 1e-3,
            value_coeff: 0.5,
            hidden_layers: vec![256, 256, 256],
            init_log_std: -1.0,
            action_center: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail(format!("clip_epsilon {} outside (0, 1)", self.clip_epsilon));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_size {
            return fail(format!("batch_size {} must be in 1..=buffer_size", self.batch_size));
        }
        if self.time_horizon == 0 || self.epochs_per_update == 0 {
            return fail("time_horizon and epochs_per_update must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.hidden_layers.contains(&0) {
            return fail("learning rate and hidden layer sizes must be positive".into());
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return fail(format!("init_log_std {} outside [{LOG_STD_MIN}, {LOG_STD_MAX}]", self.init_log_std));
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(OBS_DIM)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }
}

/// Normal log-density of `x` under `N(mean, exp(log_std)^2)`.
pub fn gaussian_log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Network,
    pub log_std: f64,
    pub action_center: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub env_action: f64,
    pub raw_action: f64,
    pub log_prob: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(config: &PpoConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            mean_net: Network::init(&config.layer_sizes(), Activation::Tanh, rng)?,
            log_std: config.init_log_std,
            action_center: config.action_center,
        })
    }

    pub fn mean(&self, obs: &Observation) -> Result<f64> {
        Ok(self.action_center + self.mean_net.predict_one(obs.as_slice())?[0])
    }

    /// Evaluation action: the mean, clamped to the brake range.
    pub fn deterministic_action(&self, obs: &Observation) -> Result<f64> {
        Ok(self.mean(obs)?.clamp(0.0, 1.0))
    }
}

pub fn sample_action<R: Rng + ?Sized>(policy: &GaussianPolicy, obs: &Observation, rng: &mut R) -> Result<ActionSample> {
    let mean = policy.mean(obs)?;
    let noise: f64 = StandardNormal.sample(rng);
    let raw_action = mean + policy.log_std.exp() * noise;
    Ok(ActionSample {
        env_action: raw_action.clamp(0.0, 1.0),
        raw_action,
        log_prob: gaussian_log_prob(raw_action, mean, policy.log_std),
    })
}

pub fn probability_ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).exp()
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Generalized advantage estimation. Returns raw (unnormalized) advantages and
/// the value targets `advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae inputs differ in length: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Shifts and scales to zero mean and unit variance (population). A single
/// sample or a constant vector is only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    capacity: usize,
    pub observations: Vec<[f64; OBS_DIM]>,
    pub raw_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value estimate of the state following the last stored step.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &Observation, sample: &ActionSample, reward: f64, value: f64, done: bool) {
        debug_assert!(!self.is_full());
        self.observations.push(obs.0);
        self.raw_actions.push(sample.raw_action);
        self.log_probs.push(sample.log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.raw_actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.bootstrap_value = 0.0;
    }

    fn observation_batch(&self, idx: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((idx.len(), OBS_DIM));
        for (mut row, &i) in x.axis_iter_mut(Axis(0)).zip(idx) {
            row.assign(&ndarray::ArrayView1::from(&self.observations[i]));
        }
        x
    }
}

/// Diagnostics for one update, beyond the training-log row.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoUpdateReport {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    /// Largest |ratio - 1| seen on the first minibatch of the first epoch.
    pub initial_ratio_max_deviation: f64,
    /// Clipped objective averaged over the first minibatch (equals the mean
    /// normalized advantage there, since all ratios are one).
    pub initial_objective: f64,
    pub initial_mean_advantage: f64,
}

pub struct PpoAgent {
    pub config: PpoConfig,
    pub policy: GaussianPolicy,
    pub value_net: Network,
    policy_opt: AdamState,
    log_std_opt: AdamState,
    value_opt: AdamState,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(config: PpoConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = GaussianPolicy::new(&config, rng)?;
        let value_net = Network::init(&config.layer_sizes(), Activation::Tanh, rng)?;
        Ok(Self {
            policy_opt: AdamState::for_network(&policy.mean_net),
            log_std_opt: AdamState::new(1),
            value_opt: AdamState::for_network(&value_net),
            config,
            policy,
            value_net,
        })
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self.value_net.predict_one(obs.as_slice())?[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("algo".into(), "ppo".into());
        c.scalars.insert("log_std".into(), self.policy.log_std);
        c.scalars.insert("action_center".into(), self.policy.action_center);
        c.networks.insert("policy".into(), self.policy.mean_net.clone());
        c.networks.insert("value".into(), self.value_net.clone());
        c
    }

    pub fn policy_from_checkpoint(c: &Checkpoint) -> Result<GaussianPolicy> {
        let mean_net = c.network("policy")?.clone();
        if mean_net.input_dim() != OBS_DIM || mean_net.output_dim() != 1 {
            return Err(Error::Shape(format!("policy network has shape {:?}", mean_net.sizes())));
        }
        Ok(GaussianPolicy {
            mean_net,
            log_std: c.scalar("log_std")?,
            action_center: c.scalar("action_center")?,
        })
    }

    /// Clipped-surrogate update over the full buffer; clears the buffer.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &mut RolloutBuffer, rng: &mut R) -> Result<PpoUpdateReport> {
        if buffer.is_empty() {
            return Err(Error::Empty("ppo update on an empty buffer".into()));
        }
        let cfg = self.config.clone();
        let (mut advantages, returns) = compute_gae(
            &buffer.rewards,
            &buffer.values,
            &buffer.dones,
            buffer.bootstrap_value,
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        normalize_advantages(&mut advantages);

        let n = buffer.len();
        let mut order: Vec<usize> = (0..n).collect();
        let (mut ratio_sum, mut clipped, mut v_loss, mut p_loss, mut count, mut batches) = (0.0, 0usize, 0.0, 0.0, 0usize, 0usize);
        let mut report = PpoUpdateReport {
            mean_ratio: 0.0,
            clip_fraction: 0.0,
            value_loss: 0.0,
            policy_loss: 0.0,
            initial_ratio_max_deviation: 0.0,
            initial_objective: 0.0,
            initial_mean_advantage: 0.0,
        };

        for epoch in 0..cfg.epochs_per_update {
            order.shuffle(rng);
            for (mb, idx) in order.chunks(cfg.batch_size).enumerate() {
                let b = idx.len() as f64;
                let x = buffer.observation_batch(idx);

                let (mean_out, policy_cache) = self.policy.mean_net.forward(x.view())?;
                let log_std = self.policy.log_std;
                let inv_var = (-2.0 * log_std).exp();
                let mut mean_grad = Array2::zeros((idx.len(), 1));
                let mut log_std_grad = -cfg.entropy_coeff;
                let mut objective = 0.0;
                let mut max_dev: f64 = 0.0;
                for (k, &i) in idx.iter().enumerate() {
                    let mean = self.policy.action_center + mean_out[[k, 0]];
                    let a = buffer.raw_actions[i];
                    let lp = gaussian_log_prob(a, mean, log_std);
                    let ratio = probability_ratio(lp, buffer.log_probs[i]);
                    let adv = advantages[i];
                    let obj = clipped_objective(ratio, adv, cfg.clip_epsilon);
                    objective += obj;
                    ratio_sum += ratio;
                    max_dev = max_dev.max((ratio - 1.0).abs());
                    if (ratio - 1.0).abs() > cfg.clip_epsilon {
                        clipped += 1;
                    }
                    // d obj / d log_prob: nonzero only where the unclipped term is selected.
                    let g = if ratio * adv <= obj { ratio * adv } else { 0.0 };
                    let diff = a - mean;
                    mean_grad[[k, 0]] = -g * diff * inv_var / b;
                    log_std_grad -= g * (diff * diff * inv_var - 1.0) / b;
                }
                if !objective.is_finite() {
                    return Err(Error::NonFinite("ppo surrogate objective".into()));
                }

                let (values, value_cache) = self.value_net.forward(x.view())?;
                let mut value_grad = Array2::zeros((idx.len(), 1));
                let mut mb_v_loss = 0.0;
                for (k, &i) in idx.iter().enumerate() {
                    let err = returns[i] - values[[k, 0]];
                    mb_v_loss += err * err;
                    value_grad[[k, 0]] = -2.0 * cfg.value_coeff * err / b;
                }
                if !mb_v_loss.is_finite() {
                    return Err(Error::NonFinite("ppo value loss".into()));
                }

                if epoch == 0 && mb == 0 {
                    report.initial_ratio_max_deviation = max_dev;
                    report.initial_objective = objective / b;
                    report.initial_mean_advantage = idx.iter().map(|&i| advantages[i]).sum::<f64>() / b;
                }
                p_loss += -objective / b;
                v_loss += mb_v_loss / b;
                count += idx.len();
                batches += 1;

                let pg = self.policy.mean_net.backward(&policy_cache, mean_grad.view())?;
                adam_step(&mut self.policy.mean_net, &pg, &mut self.policy_opt, cfg.learning_rate)?;
                let mut ls = [self.policy.log_std];
                self.log_std_opt.step_slice(&mut ls, &[log_std_grad], cfg.learning_rate)?;
                self.policy.log_std = ls[0].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let vg = self.value_net.backward(&value_cache, value_grad.view())?;
                adam_step(&mut self.value_net, &vg, &mut self.value_opt, cfg.learning_rate)?;
            }
        }
        buffer.clear();
        report.mean_ratio = ratio_sum / count as f64;
        report.clip_fraction = clipped as f64 / count as f64;
        report.value_loss = v_loss / batches as f64;
        report.policy_loss = p_loss / batches as f64;
        Ok(report)
    }
}

/// Runs episodes on uniformly drawn training trials and feeds a rollout buffer.
/// An episode interrupted by a full buffer resumes on the next call.
pub struct RolloutCollector<'a> {
    trials: &'a [Trial],
    env_config: EnvConfig,
    rng: ChaCha8Rng,
    current: Option<Running<'a>>,
    episodes_done: usize,
    total_steps: usize,
}

struct Running<'a> {
    env: BrakingEnv<'a>,
    obs: Observation,
    trial_index: usize,
    reward: f64,
}

impl<'a> RolloutCollector<'a> {
    pub fn new(trials: &'a [Trial], env_config: EnvConfig, seed: u64) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Empty("no training trials".into()));
        }
        env_config.validate()?;
        Ok(Self {
            trials,
            env_config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
            episodes_done: 0,
            total_steps: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Fills `buffer` until it is full or `max_episodes` episodes have finished
    /// in total. Returns the episodes completed during this call.
    pub fn collect(
        &mut self,
        agent: &PpoAgent,
        buffer: &mut RolloutBuffer,
        max_episodes: usize,
    ) -> Result<Vec<EpisodeSummary>> {
        let mut finished = Vec::new();
        let horizon = agent.config.time_horizon;
        let gamma = agent.config.gamma;
        while !buffer.is_full() {
            if self.current.is_none() {
                if self.episodes_done >= max_episodes {
                    break;
                }
                let trial_index = self.rng.random_range(0..self.trials.len());
                let (env, obs) = BrakingEnv::reset(&self.trials[trial_index], &self.env_config)?;
                self.current = Some(Running { env, obs, trial_index, reward: 0.0 });
            }
            let run = self.current.as_mut().expect("episode running");
            let sample = sample_action(&agent.policy, &run.obs, &mut self.rng)?;
            let value = agent.value(&run.obs)?;
            let step = run.env.step(sample.env_action)?;
            self.total_steps += 1;
            run.reward += step.reward;

            let terminal = step.event.is_terminal();
            let truncated = !terminal && run.env.steps() >= horizon;
            let mut reward = step.reward;
            if truncated {
                reward += gamma * agent.value(&step.observation)?;
            }
            buffer.push(&run.obs, &sample, reward, value, terminal || truncated);
            run.obs = step.observation;

            if terminal || truncated {
                self.episodes_done += 1;
                finished.push(EpisodeSummary {
                    episode: self.episodes_done,
                    trial_index: run.trial_index,
                    steps: run.env.steps(),
                    total_steps: self.total_steps,
                    reward: run.reward,
                    event: if terminal { step.event } else { EpisodeEvent::Ongoing },
                });
                self.current = None;
            }
        }
        buffer.bootstrap_value = match &self.current {
            Some(run) => agent.value(&run.obs)?,
            None => 0.0,
        };
        Ok(finished)
    }
}

/// Training loop state: agent, collector and buffer together.
pub struct PpoTrainer<'a> {
    pub agent: PpoAgent,
    collector: RolloutCollector<'a>,
    buffer: RolloutBuffer,
    update_rng: ChaCha8Rng,
    updates: usize,
}

/// Outcome of one collect-then-update iteration.
pub struct PpoIteration {
    pub episodes: Vec<EpisodeSummary>,
    pub update: Option<(UpdateStats, PpoUpdateReport)>,
}

impl<'a> PpoTrainer<'a> {
    pub fn new(config: PpoConfig, env_config: EnvConfig, trials: &'a [Trial], seed: u64) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = PpoAgent::new(config, &mut init_rng)?;
        let collector = RolloutCollector::new(trials, env_config, init_rng.random())?;
        let buffer = RolloutBuffer::new(agent.config.buffer_size);
        Ok(Self {
            agent,
            collector,
            buffer,
            update_rng: ChaCha8Rng::seed_from_u64(init_rng.random()),
            updates: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.collector.episodes_done()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Collects until the buffer fills (then updates) or the episode budget is spent.
    pub fn iterate(&mut self, max_episodes: usize) -> Result<PpoIteration> {
        let episodes = self.collector.collect(&self.agent, &mut self.buffer, max_episodes)?;
        if !self.buffer.is_full() {
            return Ok(PpoIteration { episodes, update: None });
        }
        let report = self.agent.update(&mut self.buffer, &mut self.update_rng)?;
        self.updates += 1;
        let mean_episode_reward = if episodes.is_empty() {
            f64::NAN
        } else {
            episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64
        };
        let stats = UpdateStats {
            update: self.updates,
            episodes: self.collector.episodes_done(),
            mean_episode_reward,
            mean_ratio: Some(report.mean_ratio),
            clip_fraction: Some(report.clip_fraction),
            value_loss: report.value_loss,
            policy_loss: report.policy_loss,
        };
        Ok(PpoIteration {
            episodes,
            update: Some((stats, report)),
        })
    }
}
