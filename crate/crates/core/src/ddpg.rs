//! Deterministic actor-critic with slowly tracking target networks, a ring
//! replay buffer, and Ornstein-Uhlenbeck exploration noise.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{BrakingEnv, EnvConfig, Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Checkpoint, Network};
use crate::training::{EpisodeSummary, UpdateStats};
use crate::trial::Trial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub buffer_size: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub warmup_steps: usize,
    pub updates_per_env_step: usize,
    pub hidden_layers: Vec<usize>,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Gradient updates aggregated into one training-log row.
    pub log_every: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            buffer_size: 10240,
            minibatch: 128,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            warmup_steps: 1000,
            updates_per_env_step: 1,
            hidden_layers: vec![256, 128],
            ou_theta: 0.15,
            ou_sigma: 0.2,
            log_every: 1000,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.minibatch == 0 || self.minibatch > self.buffer_size {
            return fail(format!("minibatch {} must be in 1..=buffer_size", self.minibatch));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) || self.hidden_layers.contains(&0) {
            return fail("learning rates and hidden sizes must be positive".into());
        }
        if !(self.ou_theta >= 0.0 && self.ou_sigma >= 0.0) || self.log_every == 0 {
            return fail("noise parameters must be nonnegative and log_every positive".into());
        }
        Ok(())
    }
}

/// Blends `source` into `target`: `target <- tau * source + (1 - tau) * target`.
pub fn soft_update(target: &mut Network, source: &Network, tau: f64) -> Result<()> {
    if !target.same_shape(source) {
        return Err(Error::Shape(format!(
            "soft update between {:?} and {:?}",
            target.sizes(),
            source.sizes()
        )));
    }
    for (t, s) in target.param_slices_mut().zip(source.param_slices()) {
        for (t, &s) in t.iter_mut().zip(s) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    pub done: bool,
}

/// Fixed-capacity ring; once full, each store overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn store(&mut self, t: Transition) -> Result<()> {
        let finite = t.state.iter().chain(&t.next_state).chain([&t.action, &t.reward]).all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.slots.len() < self.capacity { 0 } else { self.next };
        self.slots[split..].iter().chain(&self.slots[..split])
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.slots.len() < n || self.slots.is_empty() {
            return Err(Error::InvalidParams(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.slots.len()
            )));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.slots.len())).collect())
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| self.slots[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub state: f64,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Self {
        Self { state: 0.0, theta, sigma, dt }
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    /// Advances the process one step and returns the new state.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.state += self.theta * (0.0 - self.state) * self.dt + self.sigma * self.dt.sqrt() * z;
        self.state
    }
}

/// Maps the actor's linear output into the brake range.
pub fn squash(x: f64) -> f64 {
    0.5 * (x.tanh() + 1.0)
}

fn squash_derivative(x: f64) -> f64 {
    let t = x.tanh();
    0.5 * (1.0 - t * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgLosses {
    pub critic_loss: f64,
    /// Negated mean Q of the actor's actions.
    pub actor_loss: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(config: &DdpgConfig, rng: &mut R) -> Result<Self> {
        let sizes = |input: usize| {
            std::iter::once(input)
                .chain(config.hidden_layers.iter().copied())
                .chain(std::iter::once(1))
                .collect::<Vec<_>>()
        };
        let actor = Network::init(&sizes(OBS_DIM), Activation::Tanh, rng)?;
        let critic = Network::init(&sizes(OBS_DIM + 1), Activation::Tanh, rng)?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    /// Noise-free action in [0, 1].
    pub fn act(&self, obs: &Observation) -> Result<f64> {
        Ok(squash(self.actor.predict_one(obs.as_slice())?[0]))
    }

    pub fn act_with_noise<R: Rng + ?Sized>(&self, obs: &Observation, noise: &mut OuNoise, rng: &mut R) -> Result<f64> {
        Ok((self.act(obs)? + noise.sample(rng)).clamp(0.0, 1.0))
    }

    /// Bootstrapped critic targets `r + gamma (1 - done) Q'(s', mu'(s'))`,
    /// evaluated with the target networks only.
    pub fn critic_targets(target_actor: &Network, target_critic: &Network, batch: &[Transition], gamma: f64) -> Result<Vec<f64>> {
        let next = state_matrix(batch.iter().map(|t| &t.next_state));
        let next_actions = target_actor.predict(next.view())?;
        let q_next = target_critic.predict(with_actions(&next, next_actions.column(0).iter().map(|&x| squash(x))).view())?;
        Ok(batch
            .iter()
            .zip(q_next.column(0))
            .map(|(t, &q)| if t.done { t.reward } else { t.reward + gamma * q })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("algo".into(), "ddpg".into());
        c.networks.insert("actor".into(), self.actor.clone());
        c.networks.insert("critic".into(), self.critic.clone());
        c.networks.insert("target_actor".into(), self.target_actor.clone());
        c.networks.insert("target_critic".into(), self.target_critic.clone());
        c
    }

    pub fn actor_from_checkpoint(c: &Checkpoint) -> Result<Network> {
        let actor = c.network("actor")?.clone();
        if actor.input_dim() != OBS_DIM || actor.output_dim() != 1 {
            return Err(Error::Shape(format!("actor network has shape {:?}", actor.sizes())));
        }
        Ok(actor)
    }
}

fn state_matrix<'b>(states: impl ExactSizeIterator<Item = &'b [f64; OBS_DIM]>) -> Array2<f64> {
    let mut x = Array2::zeros((states.len(), OBS_DIM));
    for (mut row, s) in x.axis_iter_mut(Axis(0)).zip(states) {
        row.assign(&ndarray::ArrayView1::from(s));
    }
    x
}

fn with_actions(states: &Array2<f64>, actions: impl Iterator<Item = f64>) -> Array2<f64> {
    let mut x = Array2::zeros((states.nrows(), OBS_DIM + 1));
    x.slice_mut(s![.., ..OBS_DIM]).assign(states);
    for (v, a) in x.column_mut(OBS_DIM).iter_mut().zip(actions) {
        *v = a;
    }
    x
}

/// Live networks, targets and their optimizers.
pub struct DdpgAgent {
    pub config: DdpgConfig,
    pub nets: ActorCritic,
    actor_opt: AdamState,
    critic_opt: AdamState,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(config: DdpgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let nets = ActorCritic::new(&config, rng)?;
        Ok(Self {
            actor_opt: AdamState::for_network(&nets.actor),
            critic_opt: AdamState::for_network(&nets.critic),
            config,
            nets,
        })
    }

    /// One critic step, one actor step, then both targets soft-updated.
    pub fn update(&mut self, batch: &[Transition]) -> Result<DdpgLosses> {
        if batch.is_empty() {
            return Err(Error::Empty("ddpg update on an empty batch".into()));
        }
        let cfg = &self.config;
        let b = batch.len() as f64;
        let nets = &mut self.nets;

        let y = ActorCritic::critic_targets(&nets.target_actor, &nets.target_critic, batch, cfg.gamma)?;
        let states = state_matrix(batch.iter().map(|t| &t.state));
        let sa = with_actions(&states, batch.iter().map(|t| t.action));
        let (q, cache) = nets.critic.forward(sa.view())?;
        let mut dq = Array2::zeros((batch.len(), 1));
        let mut critic_loss = 0.0;
        for (k, &target) in y.iter().enumerate() {
            let err = q[[k, 0]] - target;
            critic_loss += err * err / b;
            dq[[k, 0]] = 2.0 * err / b;
        }
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        let g = nets.critic.backward(&cache, dq.view())?;
        adam_step(&mut nets.critic, &g, &mut self.critic_opt, cfg.critic_lr)?;

        // Actor: ascend Q(s, mu(s)) through the critic's input gradient.
        let (pre_actions, actor_cache) = nets.actor.forward(states.view())?;
        let actions: Vec<f64> = pre_actions.column(0).iter().map(|&x| squash(x)).collect();
        let sa = with_actions(&states, actions.iter().copied());
        let (q_pi, critic_cache) = nets.critic.forward(sa.view())?;
        let actor_loss = -q_pi.sum() / b;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        let dq_pi = Array2::from_elem((batch.len(), 1), -1.0 / b);
        let critic_grads = nets.critic.backward(&critic_cache, dq_pi.view())?;
        let mut d_pre = Array2::zeros((batch.len(), 1));
        for k in 0..batch.len() {
            d_pre[[k, 0]] = critic_grads.input[[k, OBS_DIM]] * squash_derivative(pre_actions[[k, 0]]);
        }
        let g = nets.actor.backward(&actor_cache, d_pre.view())?;
        adam_step(&mut nets.actor, &g, &mut self.actor_opt, cfg.actor_lr)?;

        soft_update(&mut nets.target_critic, &nets.critic, cfg.tau)?;
        soft_update(&mut nets.target_actor, &nets.actor, cfg.tau)?;
        Ok(DdpgLosses { critic_loss, actor_loss })
    }
}

/// Episode-by-episode DDPG training loop.
pub struct DdpgTrainer<'a> {
    pub agent: DdpgAgent,
    pub replay: ReplayBuffer,
    trials: &'a [Trial],
    env_config: EnvConfig,
    noise: OuNoise,
    rng: ChaCha8Rng,
    total_steps: usize,
    episodes: usize,
    updates: usize,
    pending: Vec<DdpgLosses>,
    recent_rewards: Vec<f64>,
    log: Vec<UpdateStats>,
}

impl<'a> DdpgTrainer<'a> {
    pub fn new(config: DdpgConfig, env_config: EnvConfig, trials: &'a [Trial], seed: u64) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Empty("no training trials".into()));
        }
        env_config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = DdpgAgent::new(config, &mut rng)?;
        Ok(Self {
            replay: ReplayBuffer::new(agent.config.buffer_size),
            noise: OuNoise::new(agent.config.ou_theta, agent.config.ou_sigma, env_config.dt),
            agent,
            trials,
            env_config,
            rng,
            total_steps: 0,
            episodes: 0,
            updates: 0,
            pending: Vec::new(),
            recent_rewards: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Training-log rows produced since the last call.
    pub fn drain_log(&mut self) -> Vec<UpdateStats> {
        std::mem::take(&mut self.log)
    }

    /// Runs one episode (cut short if `max_total_steps` is reached).
    pub fn run_episode(&mut self, max_total_steps: usize) -> Result<EpisodeSummary> {
        let trial_index = self.rng.random_range(0..self.trials.len());
        let (mut env, mut obs) = BrakingEnv::reset(&self.trials[trial_index], &self.env_config)?;
        self.noise.reset();
        let mut total_reward = 0.0;
        let mut event = crate::env::EpisodeEvent::Ongoing;
        while self.total_steps < max_total_steps {
            let action = if self.total_steps < self.agent.config.warmup_steps {
                self.rng.random::<f64>()
            } else {
                self.agent.nets.act_with_noise(&obs, &mut self.noise, &mut self.rng)?
            };
            let step = env.step(action)?;
            self.total_steps += 1;
            total_reward += step.reward;
            self.replay.store(Transition {
                state: obs.0,
                action: step.info.action,
                reward: step.reward,
                next_state: step.observation.0,
                done: step.event.is_terminal(),
            })?;
            obs = step.observation;

            if self.total_steps >= self.agent.config.warmup_steps && self.replay.len() >= self.agent.config.minibatch {
                for _ in 0..self.agent.config.updates_per_env_step {
                    let batch = self.replay.sample_minibatch(self.agent.config.minibatch, &mut self.rng)?;
                    let losses = self.agent.update(&batch)?;
                    self.updates += 1;
                    self.pending.push(losses);
                    if self.pending.len() >= self.agent.config.log_every {
                        self.flush_log();
                    }
                }
            }
            if step.event.is_terminal() {
                event = step.event;
                break;
            }
        }
        self.episodes += 1;
        self.recent_rewards.push(total_reward);
        Ok(EpisodeSummary {
            episode: self.episodes,
            trial_index,
            steps: env.steps(),
            total_steps: self.total_steps,
            reward: total_reward,
            event,
        })
    }

    /// Emits a log row for any updates not yet reported.
    pub fn flush_log(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let n = self.pending.len() as f64;
        let mean_reward = if self.recent_rewards.is_empty() {
            f64::NAN
        } else {
            self.recent_rewards.iter().sum::<f64>() / self.recent_rewards.len() as f64
        };
        self.log.push(UpdateStats {
            update: self.updates,
            episodes: self.episodes,
            mean_episode_reward: mean_reward,
            mean_ratio: None,
            clip_fraction: None,
            value_loss: self.pending.iter().map(|l| l.critic_loss).sum::<f64>() / n,
            policy_loss: self.pending.iter().map(|l| l.actor_loss).sum::<f64>() / n,
        });
        self.pending.clear();
        self.recent_rewards.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn tr(i: usize) -> Transition {
        Transition {
            state: [i as f64; OBS_DIM],
            action: 0.5,
            reward: -(i as f64),
            next_state: [i as f64 + 1.0; OBS_DIM],
            done: false,
        }
    }

    fn small() -> DdpgConfig {
        DdpgConfig {
            hidden_layers: vec![8, 6],
            minibatch: 4,
            ..Default::default()
        }
    }

    #[test]
    fn ring_keeps_latest() {
        let mut buf = ReplayBuffer::new(3);
        assert_eq!(buf.len(), 0);
        for i in 1..=4 {
            buf.store(tr(i)).unwrap();
        }
        let rewards: Vec<f64> = buf.iter_chronological().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![-2.0, -3.0, -4.0]);
    }

    #[test]
    fn single_element_sampling() {
        let mut buf = ReplayBuffer::new(5);
        buf.store(tr(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample_minibatch(1, &mut rng).unwrap(), vec![tr(7)]);
        assert!(buf.sample_minibatch(2, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut buf = ReplayBuffer::new(50);
        for i in 0..50 {
            buf.store(tr(i)).unwrap();
        }
        let a = buf.sample_indices(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_indices(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_transition_rejected() {
        let mut buf = ReplayBuffer::new(2);
        let mut t = tr(0);
        t.reward = f64::NAN;
        assert!(buf.store(t).is_err());
    }

    #[test]
    fn soft_update_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let source = Network::init(&[3, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let target0 = Network::init(&[3, 4, 1], Activation::Tanh, &mut rng).unwrap();

        let mut t = target0.clone();
        soft_update(&mut t, &source, 1.0).unwrap();
        assert_eq!(t, source);

        let mut t = target0.clone();
        soft_update(&mut t, &source, 0.0).unwrap();
        assert_eq!(t, target0);

        let mut t = target0.clone();
        t.layers_mut()[1].bias = Array1::from_elem(1, 0.0);
        let mut s = source.clone();
        s.layers_mut()[1].bias = Array1::from_elem(1, 2.0);
        soft_update(&mut t, &s, 0.5).unwrap();
        assert_eq!(t.layers()[1].bias[0], 1.0);

        let other = Network::init(&[3, 5, 1], Activation::Tanh, &mut rng).unwrap();
        assert!(soft_update(&mut t, &other, 0.5).is_err());
    }

    #[test]
    fn zero_sigma_noise_is_exact_actor_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = ActorCritic::new(&small(), &mut rng).unwrap();
        let obs = Observation([0.1; OBS_DIM]);
        let mut noise = OuNoise::new(0.7, 0.0, 0.1);
        assert_eq!(nets.act_with_noise(&obs, &mut noise, &mut rng).unwrap(), nets.act(&obs).unwrap());
    }

    #[test]
    fn actions_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut nets = ActorCritic::new(&small(), &mut rng).unwrap();
        let last = nets.actor.layers().len() - 1;
        nets.actor.layers_mut()[last].bias.fill(50.0);
        let mut noise = OuNoise::new(0.15, 0.0, 0.1);
        noise.state = 0.3;
        let a = nets.act_with_noise(&Observation([0.0; OBS_DIM]), &mut noise, &mut rng).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn terminal_and_undiscounted_targets_equal_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nets = ActorCritic::new(&small(), &mut rng).unwrap();
        let mut batch: Vec<Transition> = (0..6).map(tr).collect();
        for t in &mut batch {
            t.done = true;
        }
        let y = ActorCritic::critic_targets(&nets.target_actor, &nets.target_critic, &batch, 0.99).unwrap();
        assert!(batch.iter().zip(&y).all(|(t, &y)| y == t.reward));

        let live: Vec<Transition> = (0..6).map(tr).collect();
        let y = ActorCritic::critic_targets(&nets.target_actor, &nets.target_critic, &live, 0.0).unwrap();
        assert!(live.iter().zip(&y).all(|(t, &y)| y == t.reward));
    }

    #[test]
    fn zero_critic_on_zero_rewards_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = DdpgAgent::new(small(), &mut rng).unwrap();
        for net in [&mut agent.nets.critic, &mut agent.nets.target_critic] {
            for l in net.layers_mut() {
                l.weights.fill(0.0);
                l.bias.fill(0.0);
            }
        }
        let batch: Vec<Transition> = (0..4).map(|i| Transition { reward: 0.0, ..tr(i) }).collect();
        let losses = agent.update(&batch).unwrap();
        assert_eq!(losses.critic_loss, 0.0);
    }

    #[test]
    fn update_is_deterministic() {
        let batch: Vec<Transition> = (0..8).map(tr).collect();
        let run = || {
            let mut agent = DdpgAgent::new(small(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            let l = agent.update(&batch).unwrap();
            (agent.nets, l)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn targets_move_toward_live_networks() {
        let mut agent = DdpgAgent::new(DdpgConfig { tau: 0.5, ..small() }, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let batch: Vec<Transition> = (0..8).map(tr).collect();
        agent.update(&batch).unwrap();
        assert_ne!(agent.nets.target_actor, agent.nets.actor);
        let gap = |a: &Network, b: &Network| {
            a.param_slices().zip(b.param_slices()).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
        };
        let before = gap(&agent.nets.target_actor, &agent.nets.actor);
        soft_update(&mut agent.nets.target_actor, &agent.nets.actor.clone(), 0.5).unwrap();
        assert!(gap(&agent.nets.target_actor, &agent.nets.actor) <= 0.5 * before + 1e-15);
    }
}
