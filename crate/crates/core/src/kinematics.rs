//! Derivative estimation, stroke segmentation and the 27 per-stroke
//! kinematic features.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{PenSample, Stroke, StrokeFeatureVector, TaskFeatures, TaskRecording};

pub const N_FEATURES: usize = 27;

/// Canonical feature order. Column `i` of every feature vector holds
/// `FEATURE_NAMES[i]`.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "segment",
    "start_time",
    "duration",
    "start_vertical_position",
    "vertical_size",
    "peak_vertical_velocity",
    "peak_vertical_acceleration",
    "start_horizontal_position",
    "horizontal_size",
    "straightness_error",
    "slant",
    "loop_surface",
    "relative_initial_slant",
    "relative_time_to_peak_velocity",
    "relative_pen_down_duration",
    "absolute_size",
    "average_absolute_velocity",
    "road_length",
    "absolute_y_jerk",
    "normalized_y_jerk",
    "average_normalized_y_jerk",
    "absolute_jerk",
    "normalized_jerk",
    "average_normalized_jerk",
    "num_peak_acceleration_points",
    "average_pen_pressure",
    "num_strokes",
];

pub mod idx {
    pub const SEGMENT: usize = 0;
    pub const START_TIME: usize = 1;
    pub const DURATION: usize = 2;
    pub const START_Y: usize = 3;
    pub const VERTICAL_SIZE: usize = 4;
    pub const PEAK_VY: usize = 5;
    pub const PEAK_AY: usize = 6;
    pub const START_X: usize = 7;
    pub const HORIZONTAL_SIZE: usize = 8;
    pub const STRAIGHTNESS: usize = 9;
    pub const SLANT: usize = 10;
    pub const LOOP_SURFACE: usize = 11;
    pub const INITIAL_SLANT: usize = 12;
    pub const TIME_TO_PEAK: usize = 13;
    pub const PEN_UP_RATIO: usize = 14;
    pub const ABSOLUTE_SIZE: usize = 15;
    pub const MEAN_SPEED: usize = 16;
    pub const ROAD_LENGTH: usize = 17;
    pub const RMS_JERK_Y: usize = 18;
    pub const NJ_Y: usize = 19;
    pub const MEAN_NJ_Y: usize = 20;
    pub const RMS_JERK: usize = 21;
    pub const NJ: usize = 22;
    pub const MEAN_NJ: usize = 23;
    pub const ACC_PEAKS: usize = 24;
    pub const PRESSURE: usize = 25;
    pub const NUM_STROKES: usize = 26;
}

/// Samples covering the first 80 ms at 200 Hz.
pub const INITIAL_SLANT_SAMPLES: usize = 16;
/// Chords shorter than this are treated as closed strokes.
pub const CLOSED_CHORD: f64 = 1e-9;
/// Velocity-inversion splits need both flanking peaks above this fraction
/// of the run's maximum speed.
pub const INVERSION_NOISE_FLOOR: f64 = 0.05;
/// Minimum prominence of an acceleration extremum, in units of the
/// acceleration-magnitude standard deviation.
pub const PEAK_PROMINENCE: f64 = 0.05;

/// Per-sample derivatives of a stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSeries {
    pub t: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub jx: Vec<f64>,
    pub jy: Vec<f64>,
    pub speed: Vec<f64>,
}

impl KinematicSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Central differences at interior points, one-sided at the two ends.
pub(crate) fn derivative(values: &[f64], t: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (values[1] - values[0]) / (t[1] - t[0]);
    out[n - 1] = (values[n - 1] - values[n - 2]) / (t[n - 1] - t[n - 2]);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    out
}

pub fn differentiate(stroke: &Stroke) -> Result<KinematicSeries> {
    differentiate_samples(&stroke.samples)
}

pub fn differentiate_samples(samples: &[PenSample]) -> Result<KinematicSeries> {
    if samples.len() < 5 {
        return Err(Error::StrokeTooShort(samples.len()));
    }
    let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let x: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let vx = derivative(&x, &t);
    let vy = derivative(&y, &t);
    let ax = derivative(&vx, &t);
    let ay = derivative(&vy, &t);
    let jx = derivative(&ax, &t);
    let jy = derivative(&ay, &t);
    let speed = vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).collect();
    Ok(KinematicSeries {
        t,
        vx,
        vy,
        ax,
        ay,
        jx,
        jy,
        speed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentationMode {
    PenState,
    PenStateAndVelocityInversion,
}

/// Splits a time-ordered sample stream into strokes. Stroke indices start at 1.
pub fn segment_strokes(samples: &[PenSample], mode: SegmentationMode) -> Vec<Stroke> {
    let mut runs: Vec<&[PenSample]> = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].on_paper != samples[start].on_paper {
            if i > start {
                runs.push(&samples[start..i]);
            }
            start = i;
        }
    }
    let mut pieces: Vec<&[PenSample]> = Vec::new();
    for run in runs {
        if mode == SegmentationMode::PenStateAndVelocityInversion && run[0].on_paper {
            let mut last = 0;
            for cut in inversion_cuts(run) {
                pieces.push(&run[last..cut]);
                last = cut;
            }
            pieces.push(&run[last..]);
        } else {
            pieces.push(run);
        }
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, p)| Stroke::new(i + 1, p.to_vec()))
        .collect()
}

/// Cut positions (start index of each new piece) at vertical-velocity zero
/// crossings whose flanking speed peaks both exceed the noise floor.
fn inversion_cuts(run: &[PenSample]) -> Vec<usize> {
    if run.len() < 5 {
        return Vec::new();
    }
    let t: Vec<f64> = run.iter().map(|s| s.t).collect();
    let x: Vec<f64> = run.iter().map(|s| s.x).collect();
    let y: Vec<f64> = run.iter().map(|s| s.y).collect();
    let vx = derivative(&x, &t);
    let vy = derivative(&y, &t);
    let speed: Vec<f64> = vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).collect();
    let floor = INVERSION_NOISE_FLOOR * speed.iter().cloned().fold(0.0, f64::max);

    let mut candidates = Vec::new();
    let mut last_sign = 0.0;
    for (i, v) in vy.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let s = v.signum();
        if last_sign != 0.0 && s != last_sign {
            candidates.push(i);
        }
        last_sign = s;
    }

    let peak = |a: usize, b: usize| speed[a..b].iter().cloned().fold(0.0, f64::max);
    let mut cuts = Vec::new();
    let mut seg_start = 0;
    for (k, &c) in candidates.iter().enumerate() {
        let next = candidates.get(k + 1).copied().unwrap_or(run.len());
        if c - seg_start < 2 || run.len() - c < 2 {
            continue;
        }
        if peak(seg_start, c) > floor && peak(c, next) > floor {
            cuts.push(c);
            seg_start = c;
        }
    }
    cuts
}

/// Principal direction of a point cloud, as a unit vector.
fn principal_direction(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let cx = xs.iter().sum::<f64>() / n;
    let cy = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - cx, y - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let half_diff = 0.5 * (sxx - syy);
    let lambda = 0.5 * (sxx + syy) + (half_diff * half_diff + sxy * sxy).sqrt();
    let (ux, uy) = if sxy != 0.0 {
        let (a, b) = (lambda - syy, sxy);
        let norm = a.hypot(b);
        (a / norm, b / norm)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    (cx, cy, ux, uy)
}

fn straightness_with_chord(samples: &[PenSample], denom: f64) -> f64 {
    let xs: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let (cx, cy, ux, uy) = principal_direction(&xs, &ys);
    // unit normal to the fitted line
    let (nx, ny) = (-uy, ux);
    let d: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| ((x - cx) * nx + (y - cy) * ny).abs())
        .collect();
    population_std(&d) / denom
}

/// Dispersion of the points around their total-least-squares line divided
/// by the endpoint distance.
pub fn straightness_error(stroke: &Stroke) -> Result<f64> {
    let s = &stroke.samples;
    if s.len() < 2 {
        return Err(Error::DegenerateStroke("fewer than two samples"));
    }
    let chord = chord_length(s);
    if chord < CLOSED_CHORD {
        return Err(Error::DegenerateStroke("coincident endpoints"));
    }
    Ok(straightness_with_chord(s, chord))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JerkAxis {
    Y,
    Both,
}

/// Duration- and size-normalized jerk: `sqrt(0.5 * ∫ j² dt * D⁵ / L²)`,
/// integrated with the trapezoid rule on the sample grid.
pub fn normalized_jerk(
    series: &KinematicSeries,
    duration: f64,
    road_length: f64,
    axis: JerkAxis,
) -> Result<f64> {
    if road_length <= 0.0 {
        return Err(Error::DegenerateStroke("zero road length"));
    }
    if duration <= 0.0 {
        return Err(Error::DegenerateStroke("zero duration"));
    }
    let sq: Vec<f64> = match axis {
        JerkAxis::Y => series.jy.iter().map(|j| j * j).collect(),
        JerkAxis::Both => series
            .jx
            .iter()
            .zip(&series.jy)
            .map(|(a, b)| a * a + b * b)
            .collect(),
    };
    let integral: f64 = series
        .t
        .windows(2)
        .zip(sq.windows(2))
        .map(|(t, j)| 0.5 * (j[0] + j[1]) * (t[1] - t[0]))
        .sum();
    Ok((0.5 * integral * duration.powi(5) / (road_length * road_length)).sqrt())
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn chord_length(s: &[PenSample]) -> f64 {
    let (a, b) = (s[0], s[s.len() - 1]);
    (b.x - a.x).hypot(b.y - a.y)
}

fn arc_length(s: &[PenSample]) -> f64 {
    s.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

fn shoelace_area(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let pts: Vec<(f64, f64)> = points.collect();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % pts.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// Number of local extrema (maxima and minima) whose topographic
/// prominence is at least `min_prominence`.
pub fn count_prominent_extrema(signal: &[f64], min_prominence: f64) -> usize {
    let neg: Vec<f64> = signal.iter().map(|v| -v).collect();
    count_prominent_peaks(signal, min_prominence) + count_prominent_peaks(&neg, min_prominence)
}

fn count_prominent_peaks(a: &[f64], min_prominence: f64) -> usize {
    let n = a.len();
    let mut count = 0;
    for i in 1..n.saturating_sub(1) {
        if !(a[i] > a[i - 1] && a[i] > a[i + 1]) {
            continue;
        }
        let mut left = a[i];
        for j in (0..i).rev() {
            if a[j] > a[i] {
                break;
            }
            left = left.min(a[j]);
        }
        let mut right = a[i];
        for &v in &a[i + 1..] {
            if v > a[i] {
                break;
            }
            right = right.min(v);
        }
        if a[i] - left.max(right) >= min_prominence {
            count += 1;
        }
    }
    count
}

/// Task-level information a stroke's features depend on.
#[derive(Debug, Clone, Copy)]
pub struct StrokeContext<'a> {
    pub prev: Option<&'a Stroke>,
    /// Timestamp of the first sample of the recording.
    pub recording_start: f64,
    pub task_total_strokes: usize,
    /// Mean normalized vertical jerk over the task's strokes.
    pub task_mean_nj_y: f64,
    /// Mean normalized jerk over the task's strokes.
    pub task_mean_nj: f64,
}

/// All features except the two task averages (#21, #24), which are left at 0.
fn stroke_features_partial(
    stroke: &Stroke,
    prev: Option<&Stroke>,
    recording_start: f64,
    task_total_strokes: usize,
) -> Result<[f64; N_FEATURES]> {
    let s = &stroke.samples;
    let k = differentiate(stroke)?;
    let n = s.len();
    let mut f = [0.0; N_FEATURES];

    let (first, last) = (s[0], s[n - 1]);
    let duration = last.t - first.t;
    if duration <= 0.0 {
        return Err(Error::DegenerateStroke("zero duration"));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in s {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let (width, height) = (xmax - xmin, ymax - ymin);
    let diagonal = width.hypot(height);
    if diagonal < CLOSED_CHORD {
        return Err(Error::DegenerateStroke("no spatial extent"));
    }
    let chord = chord_length(s);
    let denom = if chord < CLOSED_CHORD { diagonal } else { chord };
    let arc = arc_length(s);

    f[idx::SEGMENT] = stroke.index as f64;
    f[idx::START_TIME] = first.t - recording_start;
    f[idx::DURATION] = duration;
    f[idx::START_Y] = first.y;
    f[idx::VERTICAL_SIZE] = height;
    f[idx::PEAK_VY] = k.vy.iter().fold(0.0, |m, v| m.max(v.abs()));
    f[idx::PEAK_AY] = k.ay.iter().fold(0.0, |m, v| m.max(v.abs()));
    f[idx::START_X] = first.x;
    f[idx::HORIZONTAL_SIZE] = width;
    f[idx::STRAIGHTNESS] = straightness_with_chord(s, denom);

    let slant = wrap_angle((last.y - first.y).atan2(last.x - first.x));
    f[idx::SLANT] = slant;
    f[idx::LOOP_SURFACE] = match prev {
        Some(p) => shoelace_area(p.samples.iter().chain(s.iter()).map(|q| (q.x, q.y))),
        None => 0.0,
    };
    let m = INITIAL_SLANT_SAMPLES.min(n);
    let initial = (s[m - 1].y - first.y).atan2(s[m - 1].x - first.x);
    f[idx::INITIAL_SLANT] = wrap_angle(initial - slant);

    let mut peak_i = 0;
    for (i, v) in k.speed.iter().enumerate() {
        if *v > k.speed[peak_i] {
            peak_i = i;
        }
    }
    f[idx::TIME_TO_PEAK] = (s[peak_i].t - first.t) / duration;
    let pen_up: f64 = s
        .windows(2)
        .filter(|w| !w[0].on_paper)
        .map(|w| w[1].t - w[0].t)
        .sum();
    f[idx::PEN_UP_RATIO] = (pen_up / duration).clamp(0.0, 1.0);
    f[idx::ABSOLUTE_SIZE] = diagonal;
    f[idx::MEAN_SPEED] = k.speed.iter().sum::<f64>() / n as f64;
    f[idx::ROAD_LENGTH] = arc / denom;

    let nf = n as f64;
    f[idx::RMS_JERK_Y] = (k.jy.iter().map(|j| j * j).sum::<f64>() / nf).sqrt();
    f[idx::RMS_JERK] = (k
        .jx
        .iter()
        .zip(&k.jy)
        .map(|(a, b)| a * a + b * b)
        .sum::<f64>()
        / nf)
        .sqrt();
    f[idx::NJ_Y] = normalized_jerk(&k, duration, arc, JerkAxis::Y)?;
    f[idx::NJ] = normalized_jerk(&k, duration, arc, JerkAxis::Both)?;

    let acc: Vec<f64> = k.ax.iter().zip(&k.ay).map(|(a, b)| a.hypot(*b)).collect();
    f[idx::ACC_PEAKS] = count_prominent_extrema(&acc, PEAK_PROMINENCE * population_std(&acc)) as f64;

    let on: Vec<f64> = s.iter().filter(|p| p.on_paper).map(|p| p.pressure).collect();
    f[idx::PRESSURE] = if on.is_empty() {
        0.0
    } else {
        on.iter().sum::<f64>() / on.len() as f64
    };
    f[idx::NUM_STROKES] = task_total_strokes as f64;
    Ok(f)
}

pub fn extract_stroke_features(stroke: &Stroke, ctx: &StrokeContext<'_>) -> Result<StrokeFeatureVector> {
    let mut f = stroke_features_partial(stroke, ctx.prev, ctx.recording_start, ctx.task_total_strokes)?;
    f[idx::MEAN_NJ_Y] = ctx.task_mean_nj_y;
    f[idx::MEAN_NJ] = ctx.task_mean_nj;
    Ok(StrokeFeatureVector(f.to_vec()))
}

/// Features of every stroke of a recording, including the task-level
/// averages of normalized jerk.
pub fn extract_task_features(rec: &TaskRecording) -> Result<TaskFeatures> {
    let start = rec.start_time();
    let total = rec.strokes.len();
    let mut rows = Vec::with_capacity(total);
    for (i, stroke) in rec.strokes.iter().enumerate() {
        let prev = if i > 0 { Some(&rec.strokes[i - 1]) } else { None };
        rows.push(stroke_features_partial(stroke, prev, start, total)?);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean_y = rows.iter().map(|r| r[idx::NJ_Y]).sum::<f64>() / n;
        let mean = rows.iter().map(|r| r[idx::NJ]).sum::<f64>() / n;
        for r in &mut rows {
            r[idx::MEAN_NJ_Y] = mean_y;
            r[idx::MEAN_NJ] = mean;
        }
    }
    Ok(TaskFeatures {
        subject_id: rec.subject_id.clone(),
        task_id: rec.task_id,
        rows: rows.into_iter().map(|r| r.to_vec()).collect(),
    })
}
