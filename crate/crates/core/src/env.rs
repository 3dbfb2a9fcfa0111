//! Longitudinal braking environment.
//!
//! A vehicle drives along +x toward a pedestrian whose recorded trial is
//! replayed open-loop, one frame per step. The agent chooses a brake fraction
//! in [0, 1] each step. An episode ends on the first of Accident, Pass, Cross,
//! Stop or Timeout (checked in that priority order).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::Trial;

/// Number of observation components fed to the agents.
pub const OBS_DIM: usize = 7;
const REL_Y_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Simulation step, s.
    pub dt: f64,
    /// Initial distance to the pedestrian, m.
    pub d_init: f64,
    /// Initial speed, m/s.
    pub v_init: f64,
    /// Extent of the safe box along the road, m.
    pub safe_box_width: f64,
    /// Deceleration at full brake, m/s^2.
    pub d_max: f64,
    /// Accident penalty weight.
    pub eta: f64,
    /// Speed penalty weight.
    pub beta: f64,
    /// Comfort (jerk) penalty weight; zero disables the comfort objective.
    pub mu: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            d_init: 160.0,
            v_init: 11.11,
            safe_box_width: 3.0,
            d_max: 8.0,
            eta: 0.1,
            beta: 0.01,
            mu: 0.01,
            max_steps: 600,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("d_init", self.d_init),
            ("safe_box_width", self.safe_box_width),
            ("d_max", self.d_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("v_init", self.v_init), ("eta", self.eta), ("beta", self.beta), ("mu", self.mu)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParams("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn speed_scale(&self) -> f64 {
        if self.v_init > 0.0 {
            self.v_init
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pos_x: f64,
    pub v: f64,
    pub v_prev: f64,
    pub v_prev2: f64,
    pub last_action: f64,
}

/// Agent input, already normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn rel_x(&self) -> f64 {
        self.0[0]
    }
    pub fn v_veh(&self) -> f64 {
        self.0[6]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpisodeEvent {
    Ongoing,
    Accident,
    Pass,
    Cross,
    Stop,
    Timeout,
}

impl EpisodeEvent {
    pub const TERMINAL: [EpisodeEvent; 5] = [Self::Accident, Self::Pass, Self::Cross, Self::Stop, Self::Timeout];

    pub fn is_terminal(self) -> bool {
        self != EpisodeEvent::Ongoing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ongoing => "Ongoing",
            Self::Accident => "Accident",
            Self::Pass => "Pass",
            Self::Cross => "Cross",
            Self::Stop => "Stop",
            Self::Timeout => "Timeout",
        }
    }
}

impl fmt::Display for EpisodeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EpisodeEvent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Self::Ongoing, Self::Accident, Self::Pass, Self::Cross, Self::Stop, Self::Timeout]
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown event `{s}`")))
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub t: f64,
    pub pos_x: f64,
    pub v: f64,
    pub action: f64,
    pub jerk: f64,
    /// Euclidean distance between vehicle and pedestrian.
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub event: EpisodeEvent,
    pub info: StepInfo,
}

/// Central second difference of the velocity sequence.
pub fn compute_jerk(v_next: f64, v: f64, v_prev: f64, dt: f64) -> f64 {
    (v_next - 2.0 * v + v_prev) / (dt * dt)
}

/// Accident, speed and comfort penalties; never positive.
pub fn compute_reward(v_veh: f64, action: f64, jerk: f64, event: EpisodeEvent, config: &EnvConfig) -> f64 {
    let accident = if event == EpisodeEvent::Accident { config.eta * v_veh } else { 0.0 };
    -accident - config.beta * v_veh - config.mu * action * jerk.abs()
}

/// Evaluates the termination conditions in priority order.
pub fn detect_event(
    vehicle: &VehicleState,
    trial: &Trial,
    cursor: usize,
    steps: usize,
    config: &EnvConfig,
) -> EpisodeEvent {
    let ped_x = trial.frame_at(cursor).ped_x;
    let half = config.safe_box_width / 2.0;
    let crossing = match (trial.crossing_start_idx, trial.crossing_end_idx) {
        (Some(s), Some(e)) => (s..=e).contains(&cursor),
        _ => false,
    };
    if crossing && (vehicle.pos_x - ped_x).abs() <= half {
        return EpisodeEvent::Accident;
    }
    let before_onset = trial.crossing_start_idx.is_none_or(|s| cursor < s);
    if vehicle.pos_x > ped_x + half && before_onset {
        return EpisodeEvent::Pass;
    }
    if trial.crossing_end_idx.is_some_and(|e| cursor >= e) {
        return EpisodeEvent::Cross;
    }
    if vehicle.v == 0.0 {
        return EpisodeEvent::Stop;
    }
    if steps >= config.max_steps {
        return EpisodeEvent::Timeout;
    }
    EpisodeEvent::Ongoing
}

/// One approach of the vehicle toward one pedestrian trial.
#[derive(Debug, Clone)]
pub struct BrakingEnv<'a> {
    config: EnvConfig,
    trial: &'a Trial,
    lane_y: f64,
    vehicle: VehicleState,
    cursor: usize,
    steps: usize,
    done: bool,
}

impl<'a> BrakingEnv<'a> {
    /// Places the vehicle `d_init` behind the pedestrian at `v_init` and returns the first observation.
    pub fn reset(trial: &'a Trial, config: &EnvConfig) -> Result<(Self, Observation)> {
        config.validate()?;
        if trial.frames.len() < 2 {
            return Err(Error::InvalidParams(format!("trial {} has fewer than 2 frames", trial.id)));
        }
        let ped_x = trial.frames[0].ped_x;
        let vehicle = VehicleState {
            pos_x: ped_x - config.d_init,
            v: config.v_init,
            v_prev: config.v_init,
            v_prev2: config.v_init,
            last_action: 0.0,
        };
        // Vehicle holds the centre of the lane nearest the waiting pedestrian.
        let lane_y = trial.curb_y + (trial.far_y - trial.curb_y) / 4.0;
        let env = Self {
            config: config.clone(),
            trial,
            lane_y,
            vehicle,
            cursor: 0,
            steps: 0,
            done: false,
        };
        let obs = env.observe();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn trial(&self) -> &Trial {
        self.trial
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self) -> Observation {
        let f = self.trial.frame_at(self.cursor);
        let speed_scale = self.config.speed_scale();
        Observation([
            (f.ped_x - self.vehicle.pos_x) / self.config.d_init,
            (f.ped_y - self.lane_y) / REL_Y_SCALE,
            f.head_x,
            f.head_y,
            f.head_z,
            f.ped_speed / speed_scale,
            self.vehicle.v / speed_scale,
        ])
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called after the episode terminated".into()));
        }
        if !action.is_finite() {
            return Err(Error::NonFinite(format!("brake action {action}")));
        }
        let action = action.clamp(0.0, 1.0);
        let cfg = &self.config;
        let v = self.vehicle.v;
        let v_next = (v - action * cfg.d_max * cfg.dt).max(0.0);

        self.vehicle.v_prev2 = self.vehicle.v_prev;
        self.vehicle.v_prev = v;
        self.vehicle.v = v_next;
        self.vehicle.pos_x += v_next * cfg.dt;
        self.vehicle.last_action = action;
        self.cursor = (self.cursor + 1).min(self.trial.frames.len() - 1);
        self.steps += 1;

        let jerk = compute_jerk(self.vehicle.v, self.vehicle.v_prev, self.vehicle.v_prev2, cfg.dt);
        let event = detect_event(&self.vehicle, self.trial, self.cursor, self.steps, cfg);
        let reward = compute_reward(v_next, action, jerk, event, cfg);
        self.done = event.is_terminal();

        let f = self.trial.frame_at(self.cursor);
        let info = StepInfo {
            step: self.steps,
            t: self.steps as f64 * cfg.dt,
            pos_x: self.vehicle.pos_x,
            v: v_next,
            action,
            jerk,
            dist: (f.ped_x - self.vehicle.pos_x).hypot(f.ped_y - self.lane_y),
        };
        Ok(StepResult {
            observation: self.observe(),
            reward,
            event,
            info,
        })
    }
}
