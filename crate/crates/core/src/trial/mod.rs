//! Pedestrian road-crossing trials: the recorded (or synthesized) trajectories
//! the braking environment replays open-loop.
//!
//! World frame: x runs along the road (the vehicle travels in +x), y runs
//! across it. A pedestrian waits near `curb_y` and crosses toward `far_y`.

mod io;
mod synth;

pub use io::{load_trial, load_trials, save_trial, save_trials};
pub use synth::{generate_synthetic_trial, generate_synthetic_trial_with_truth, SynthParams, SynthTruth};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Nominal recording interval of a trial.
pub const FRAME_DT: f64 = 0.1;
/// Accepted spacing between consecutive frames.
pub const MIN_FRAME_SPACING: f64 = 0.05;
pub const MAX_FRAME_SPACING: f64 = 0.2;
/// Respondents walked; anything faster is tracking noise.
pub const MAX_PED_SPEED: f64 = 3.0;
/// Incursion past the curb that counts as a committed crossing.
pub const DEFAULT_ENTRY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialFrame {
    pub t: f64,
    pub ped_x: f64,
    pub ped_y: f64,
    pub head_x: f64,
    pub head_y: f64,
    pub head_z: f64,
    pub ped_speed: f64,
}

impl TrialFrame {
    pub fn head_norm(&self) -> f64 {
        (self.head_x * self.head_x + self.head_y * self.head_y + self.head_z * self.head_z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: String,
    pub frames: Vec<TrialFrame>,
    pub curb_y: f64,
    pub far_y: f64,
    pub crossing_start_idx: Option<usize>,
    pub crossing_end_idx: Option<usize>,
    pub wait_time: f64,
}

impl Trial {
    /// Signed distance of `y` past the curb, positive toward the far side.
    pub fn depth(&self, y: f64) -> f64 {
        (y - self.curb_y) * self.crossing_sign()
    }

    pub fn crossing_sign(&self) -> f64 {
        if self.far_y >= self.curb_y {
            1.0
        } else {
            -1.0
        }
    }

    pub fn road_width(&self) -> f64 {
        (self.far_y - self.curb_y).abs()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Frame at `cursor`, holding the last frame once playback is exhausted.
    pub fn frame_at(&self, cursor: usize) -> &TrialFrame {
        &self.frames[cursor.min(self.frames.len() - 1)]
    }

    fn computed_wait_time(&self) -> f64 {
        let t0 = self.frames.first().map_or(0.0, |f| f.t);
        match self.crossing_start_idx {
            Some(i) => self.frames[i].t - t0,
            None => self.duration(),
        }
    }

    /// Checks every structural invariant of a loaded or generated trial.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(format!("trial {}: {msg}", self.id)));
        if self.frames.is_empty() {
            return bad("no frames".into());
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                return bad(format!("timestamps not increasing at frame {}", i + 1));
            }
            if !(MIN_FRAME_SPACING - 1e-9..=MAX_FRAME_SPACING + 1e-9).contains(&dt) {
                return bad(format!("frame spacing {dt} out of range at frame {}", i + 1));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            let vals = [f.t, f.ped_x, f.ped_y, f.head_x, f.head_y, f.head_z, f.ped_speed];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite value at frame {i}"));
            }
            if !(0.0..=MAX_PED_SPEED).contains(&f.ped_speed) {
                return bad(format!("pedestrian speed {} out of range at frame {i}", f.ped_speed));
            }
            let n = f.head_norm();
            if !(0.5..=1.5).contains(&n) {
                return bad(format!("head direction norm {n} out of range at frame {i}"));
            }
        }
        if (self.frames[0].ped_y - self.curb_y).abs() >= 1.0 {
            return bad("first frame is not on the waiting side".into());
        }
        match (self.crossing_start_idx, self.crossing_end_idx) {
            (Some(s), Some(e)) => {
                if !(s < e && e < self.frames.len()) {
                    return bad(format!("crossing indices ({s}, {e}) inconsistent"));
                }
            }
            (None, None) => {}
            _ => return bad("crossing indices must be both present or both absent".into()),
        }
        let expected = self.computed_wait_time();
        if (self.wait_time - expected).abs() > MAX_FRAME_SPACING + 1e-9 {
            return bad(format!("wait_time {} disagrees with annotation ({expected})", self.wait_time));
        }
        Ok(())
    }
}

/// Locates the committed crossing: the last excursion past `entry_threshold`
/// that reaches the far side without dropping back toward the curb.
pub fn annotate_crossing(mut trial: Trial, entry_threshold: f64) -> Trial {
    let width = trial.road_width();
    let depths: Vec<f64> = trial.frames.iter().map(|f| trial.depth(f.ped_y)).collect();

    let annotation = depths.iter().position(|&d| d >= width).and_then(|end| {
        let mut start = end;
        while start > 0 && depths[start - 1] >= entry_threshold {
            start -= 1;
        }
        (start < end).then_some((start, end))
    });

    trial.crossing_start_idx = annotation.map(|(s, _)| s);
    trial.crossing_end_idx = annotation.map(|(_, e)| e);
    trial.wait_time = trial.computed_wait_time();
    trial
}

/// Fills `ped_speed` from finite differences of consecutive positions.
pub fn derive_speeds(mut trial: Trial) -> Result<Trial> {
    if trial.frames.len() < 2 {
        return Err(Error::InvalidParams(format!(
            "trial {}: speed derivation needs at least 2 frames",
            trial.id
        )));
    }
    let speeds: Vec<f64> = trial
        .frames
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let d = (b.ped_x - a.ped_x).hypot(b.ped_y - a.ped_y);
            (d / (b.t - a.t)).clamp(0.0, MAX_PED_SPEED)
        })
        .collect();
    trial.frames[0].ped_speed = speeds[0];
    for (f, s) in trial.frames[1..].iter_mut().zip(speeds) {
        f.ped_speed = s;
    }
    Ok(trial)
}

/// Seeded random partition into (train, test) with `round(fraction * n)` training trials.
pub fn split_trials<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::Empty("cannot split an empty trial set".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = items.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> { idx.iter().map(|&i| slots[i].take().unwrap()).collect() };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    Ok((train, test))
}
