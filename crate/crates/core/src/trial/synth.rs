//! Synthetic road-crossing trials.
//!
//! A pedestrian waits at the curb scanning left and right, optionally makes one
//! false start (steps into the road, retreats, waits again), then walks across
//! with a slowly varying pace and stands briefly on the far side.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{annotate_crossing, derive_speeds, Trial, TrialFrame, DEFAULT_ENTRY_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub wait_time_range: (f64, f64),
    pub walk_speed_range: (f64, f64),
    pub false_start_prob: f64,
    pub head_scan_period_range: (f64, f64),
    pub road_width: f64,
    pub frame_dt: f64,
    pub duration_max: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            wait_time_range: (2.0, 20.0),
            walk_speed_range: (1.0, 1.7),
            false_start_prob: 0.15,
            head_scan_period_range: (1.5, 4.0),
            road_width: 7.0,
            frame_dt: 0.1,
            duration_max: 60.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("wait_time_range", self.wait_time_range),
            ("walk_speed_range", self.walk_speed_range),
            ("head_scan_period_range", self.head_scan_period_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::InvalidParams(format!("{name} ({lo}, {hi}) must be a nonempty nonnegative range")));
            }
        }
        if self.walk_speed_range.0 <= 0.0 {
            return Err(Error::InvalidParams("walk speed must be positive".into()));
        }
        if self.head_scan_period_range.0 <= 0.0 {
            return Err(Error::InvalidParams("head scan period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.false_start_prob) {
            return Err(Error::InvalidParams(format!("false_start_prob {} outside [0, 1]", self.false_start_prob)));
        }
        if !(self.road_width > DEFAULT_ENTRY_THRESHOLD) {
            return Err(Error::InvalidParams(format!("road width {} too small", self.road_width)));
        }
        if !(0.05..=0.2).contains(&self.frame_dt) {
            return Err(Error::InvalidParams(format!("frame_dt {} outside [0.05, 0.2]", self.frame_dt)));
        }
        if !(self.duration_max > 0.0) {
            return Err(Error::InvalidParams("duration_max must be positive".into()));
        }
        Ok(())
    }
}

/// What the generator actually did, for checking the annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Pedestrian leaves the curb for the real crossing.
    pub walk_start_t: f64,
    /// Incursion reaches the default entry threshold.
    pub entry_t: f64,
    /// Pedestrian reaches the far edge of the road.
    pub arrival_t: f64,
    /// Start time and depth of the false start, if one occurred.
    pub false_start: Option<(f64, f64)>,
}

const CURB_DITHER: f64 = 0.01;
const SPEED_VARIATION: f64 = 0.1;
const FAR_SIDE_OVERSHOOT: f64 = 0.5;
const FAR_SIDE_DWELL: f64 = 1.0;
const FALSE_START_PAUSE: f64 = 0.4;
const HEAD_PITCH: f64 = -0.1;

pub fn generate_synthetic_trial<R: Rng + ?Sized>(rng: &mut R, params: &SynthParams) -> Result<Trial> {
    generate_synthetic_trial_with_truth(rng, params).map(|(t, _)| t)
}

pub fn generate_synthetic_trial_with_truth<R: Rng + ?Sized>(
    rng: &mut R,
    params: &SynthParams,
) -> Result<(Trial, SynthTruth)> {
    params.validate()?;
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };

    let curb_y = 0.0;
    let far_y = params.road_width;
    let base_wait = uniform(rng, params.wait_time_range);

    let false_start = if rng.random::<f64>() < params.false_start_prob {
        let start = base_wait * rng.random_range(0.25..0.6);
        let depth = rng.random_range(0.6..1.0);
        let speed = uniform(rng, params.walk_speed_range);
        let rewait = rng.random_range(1.0..3.0);
        Some(FalseStart { start, depth, speed, rewait })
    } else {
        None
    };
    let walk_start_t = match &false_start {
        Some(fs) => base_wait.max(fs.start + fs.duration() + fs.rewait),
        None => base_wait,
    };

    let walk = Walk {
        start: walk_start_t,
        speed: uniform(rng, params.walk_speed_range),
        period: rng.random_range(2.0..4.0),
        phase: rng.random_range(0.0..2.0 * PI),
        drift: rng.random_range(-0.15..0.15),
    };
    let entry_t = walk.time_to_reach(DEFAULT_ENTRY_THRESHOLD);
    let arrival_t = walk.time_to_reach(params.road_width);
    let finish_t = walk.time_to_reach(params.road_width + FAR_SIDE_OVERSHOOT);
    let end_t = finish_t + FAR_SIDE_DWELL;
    if end_t > params.duration_max {
        return Err(Error::Generation(format!(
            "trial needs {end_t:.1} s but duration_max is {} s",
            params.duration_max
        )));
    }

    let head = HeadScan {
        amplitude: rng.random_range(0.6..1.3),
        period: uniform(rng, params.head_scan_period_range),
        phase: rng.random_range(0.0..2.0 * PI),
    };

    let n_frames = (end_t / params.frame_dt).ceil() as usize + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * params.frame_dt;
        let (x, depth, crossing) = if t >= walk.start {
            let tau = t - walk.start;
            (walk.drift * tau, walk.distance(tau).min(params.road_width + FAR_SIDE_OVERSHOOT), true)
        } else {
            let excursion = false_start.as_ref().map_or(0.0, |fs| fs.depth_at(t));
            let dx = rng.random_range(-CURB_DITHER..CURB_DITHER);
            let dy = rng.random_range(-CURB_DITHER..CURB_DITHER);
            let depth = if excursion > 0.0 { excursion } else { dy };
            (dx, depth, false)
        };
        let yaw = head.yaw(t, if crossing { 0.3 } else { 1.0 });
        frames.push(TrialFrame {
            t,
            ped_x: x,
            ped_y: curb_y + depth,
            head_x: yaw.sin() * HEAD_PITCH.cos(),
            head_y: yaw.cos() * HEAD_PITCH.cos(),
            head_z: HEAD_PITCH.sin(),
            ped_speed: 0.0,
        });
    }

    let trial = Trial {
        id: "synthetic".into(),
        frames,
        curb_y,
        far_y,
        crossing_start_idx: None,
        crossing_end_idx: None,
        wait_time: 0.0,
    };
    let trial = derive_speeds(annotate_crossing(trial, DEFAULT_ENTRY_THRESHOLD))?;
    trial.validate()?;
    let truth = SynthTruth {
        walk_start_t,
        entry_t,
        arrival_t,
        false_start: false_start.map(|fs| (fs.start, fs.depth)),
    };
    Ok((trial, truth))
}

struct FalseStart {
    start: f64,
    depth: f64,
    speed: f64,
    rewait: f64,
}

impl FalseStart {
    fn leg(&self) -> f64 {
        self.depth / self.speed
    }

    fn duration(&self) -> f64 {
        2.0 * self.leg() + FALSE_START_PAUSE
    }

    fn depth_at(&self, t: f64) -> f64 {
        let tau = t - self.start;
        let leg = self.leg();
        if tau <= 0.0 || tau >= self.duration() {
            0.0
        } else if tau < leg {
            self.speed * tau
        } else if tau < leg + FALSE_START_PAUSE {
            self.depth
        } else {
            self.depth - self.speed * (tau - leg - FALSE_START_PAUSE)
        }
    }
}

/// Walking pace `speed * (1 + 0.1 sin(2 pi tau / period + phase))`.
struct Walk {
    start: f64,
    speed: f64,
    period: f64,
    phase: f64,
    drift: f64,
}

impl Walk {
    fn distance(&self, tau: f64) -> f64 {
        let w = 2.0 * PI / self.period;
        let osc = SPEED_VARIATION / w * ((self.phase).cos() - (w * tau + self.phase).cos());
        self.speed * (tau + osc)
    }

    /// Absolute time the walk reaches `depth`; distance is strictly increasing.
    fn time_to_reach(&self, depth: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, depth / (self.speed * (1.0 - SPEED_VARIATION)) + 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.distance(mid) < depth {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.start + hi
    }
}

struct HeadScan {
    amplitude: f64,
    period: f64,
    phase: f64,
}

impl HeadScan {
    fn yaw(&self, t: f64, scale: f64) -> f64 {
        scale * self.amplitude * (2.0 * PI * t / self.period + self.phase).sin()
    }
}
