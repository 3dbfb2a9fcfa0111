//! On-disk trial format: `<id>.csv` frames plus a `<id>.meta` annotation sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{annotate_crossing, derive_speeds, Trial, TrialFrame, DEFAULT_ENTRY_THRESHOLD, FRAME_DT};
use super::{MAX_FRAME_SPACING, MIN_FRAME_SPACING};
use crate::error::{Error, Result};

pub(crate) const CSV_HEADER: &str = "t,ped_x,ped_y,head_x,head_y,head_z";
const COLUMNS: [&str; 6] = ["t", "ped_x", "ped_y", "head_x", "head_y", "head_z"];

/// Loads every `*.csv` trial in `dir`, ordered by file name.
pub fn load_trials(dir: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(load_trial).collect()
}

/// Loads one trial from its CSV path; the sidecar is looked up next to it.
pub fn load_trial(csv_path: impl AsRef<Path>) -> Result<Trial> {
    let csv_path = csv_path.as_ref();
    let id = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::NotFound(csv_path.to_path_buf()))?
        .to_string();
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut frames = parse_frames(csv_path, &text)?;

    let meta_path = csv_path.with_extension("meta");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = parse_meta(&meta_path, &meta_text)?;

    for f in &mut frames {
        let n = f.head_norm();
        f.head_x /= n;
        f.head_y /= n;
        f.head_z /= n;
    }
    let resampled = !is_uniform(&frames);
    if resampled {
        frames = resample(&frames, FRAME_DT);
    }

    let mut trial = Trial {
        id,
        frames,
        curb_y: meta.curb_y,
        far_y: meta.far_y,
        crossing_start_idx: None,
        crossing_end_idx: None,
        wait_time: 0.0,
    };
    trial = match (meta.crossing_start_idx, meta.crossing_end_idx) {
        (Some(s), Some(e)) if !resampled => {
            trial.crossing_start_idx = Some(s);
            trial.crossing_end_idx = Some(e);
            trial.wait_time = trial.frames.get(s).map_or(0.0, |f| f.t) - trial.frames[0].t;
            trial
        }
        _ => annotate_crossing(trial, DEFAULT_ENTRY_THRESHOLD),
    };
    let trial = derive_speeds(trial)?;
    trial.validate().map_err(|e| Error::Parse {
        file: meta_path,
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(trial)
}

/// Writes `<id>.csv` and `<id>.meta` into `dir`.
pub fn save_trial(trial: &Trial, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut csv = String::with_capacity(64 * (trial.frames.len() + 1));
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for f in &trial.frames {
        writeln!(
            csv,
            "{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            f.t, f.ped_x, f.ped_y, f.head_x, f.head_y, f.head_z
        )
        .unwrap();
    }
    let mut meta = format!("curb_y={:.12}\nfar_y={:.12}\n", trial.curb_y, trial.far_y);
    if let (Some(s), Some(e)) = (trial.crossing_start_idx, trial.crossing_end_idx) {
        writeln!(meta, "crossing_start_idx={s}\ncrossing_end_idx={e}").unwrap();
    }
    let csv_path = dir.join(format!("{}.csv", trial.id));
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let meta_path = dir.join(format!("{}.meta", trial.id));
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

pub fn save_trials(trials: &[Trial], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    trials.iter().try_for_each(|t| save_trial(t, dir))
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_frames(file: &Path, text: &str) -> Result<Vec<TrialFrame>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut col = [0usize; 6];
    for (slot, want) in col.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| *n == want)
            .ok_or_else(|| parse_err(file, 1, format!("missing column `{want}`")))?;
    }

    let mut frames: Vec<TrialFrame> = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(parse_err(
                file,
                line_no,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        let mut v = [0.0f64; 6];
        for (out, &c) in v.iter_mut().zip(&col) {
            *out = fields[c]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(file, line_no, format!("bad number `{}`", fields[c])))?;
        }
        let frame = TrialFrame {
            t: v[0],
            ped_x: v[1],
            ped_y: v[2],
            head_x: v[3],
            head_y: v[4],
            head_z: v[5],
            ped_speed: 0.0,
        };
        if let Some(prev) = frames.last() {
            let dt = frame.t - prev.t;
            if dt <= 0.0 {
                return Err(parse_err(file, line_no, "timestamps not strictly increasing"));
            }
            if !(MIN_FRAME_SPACING - 1e-9..=MAX_FRAME_SPACING + 1e-9).contains(&dt) {
                return Err(parse_err(file, line_no, format!("frame spacing {dt} s out of range")));
            }
        }
        let n = frame.head_norm();
        if !(0.5..=1.5).contains(&n) {
            return Err(parse_err(file, line_no, format!("head direction norm {n} out of range")));
        }
        frames.push(frame);
    }
    if frames.len() < 2 {
        return Err(parse_err(file, text.lines().count(), "need at least 2 frames"));
    }
    Ok(frames)
}

struct Meta {
    curb_y: f64,
    far_y: f64,
    crossing_start_idx: Option<usize>,
    crossing_end_idx: Option<usize>,
}

fn parse_meta(file: &Path, text: &str) -> Result<Meta> {
    let (mut curb_y, mut far_y, mut start, mut end) = (None, None, None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(file, i + 1, "expected key=value"))?;
        let value = value.trim();
        let num = || value.parse::<f64>().map_err(|_| parse_err(file, i + 1, format!("bad number `{value}`")));
        let idx = || value.parse::<usize>().map_err(|_| parse_err(file, i + 1, format!("bad index `{value}`")));
        match key.trim() {
            "curb_y" => curb_y = Some(num()?),
            "far_y" => far_y = Some(num()?),
            "crossing_start_idx" => start = Some(idx()?),
            "crossing_end_idx" => end = Some(idx()?),
            other => return Err(parse_err(file, i + 1, format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| parse_err(file, 0, format!("missing key `{k}`"));
    Ok(Meta {
        curb_y: curb_y.ok_or_else(|| missing("curb_y"))?,
        far_y: far_y.ok_or_else(|| missing("far_y"))?,
        crossing_start_idx: start,
        crossing_end_idx: end,
    })
}

fn is_uniform(frames: &[TrialFrame]) -> bool {
    frames.windows(2).all(|w| ((w[1].t - w[0].t) - FRAME_DT).abs() < 1e-6)
}

/// Linear interpolation of all channels onto a uniform grid starting at the first frame.
fn resample(frames: &[TrialFrame], dt: f64) -> Vec<TrialFrame> {
    let t0 = frames[0].t;
    let t_end = frames[frames.len() - 1].t;
    let n = ((t_end - t0) / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 2 < frames.len() && frames[j + 1].t < t {
            j += 1;
        }
        let (a, b) = (&frames[j], &frames[j + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        let mut f = TrialFrame {
            t,
            ped_x: lerp(a.ped_x, b.ped_x),
            ped_y: lerp(a.ped_y, b.ped_y),
            head_x: lerp(a.head_x, b.head_x),
            head_y: lerp(a.head_y, b.head_y),
            head_z: lerp(a.head_z, b.head_z),
            ped_speed: 0.0,
        };
        let norm = f.head_norm();
        if norm > 0.0 {
            f.head_x /= norm;
            f.head_y /= norm;
            f.head_z /= norm;
        }
        out.push(f);
    }
    out
}
