//! Shared domain types: pen samples, strokes, task recordings, subjects.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Digitizer sampling rate in Hz.
pub const SAMPLE_RATE: f64 = 200.0;
/// Nominal sampling period in seconds.
pub const SAMPLE_PERIOD: f64 = 1.0 / SAMPLE_RATE;
/// Number of handwriting tasks (25 main tasks plus 9 subtasks).
pub const N_TASKS: usize = 34;
/// Relative tolerance on the spacing of consecutive timestamps.
pub const PERIOD_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
    pub on_paper: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    /// Ordinal within the recording, starting at 1.
    pub index: usize,
    pub samples: Vec<PenSample>,
}

impl Stroke {
    pub fn new(index: usize, samples: Vec<PenSample>) -> Self {
        Stroke { index, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn on_paper(&self) -> bool {
        self.samples.first().map(|s| s.on_paper).unwrap_or(false)
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecording {
    pub subject_id: String,
    pub task_id: usize,
    pub strokes: Vec<Stroke>,
}

impl TaskRecording {
    pub fn samples(&self) -> impl Iterator<Item = &PenSample> {
        self.strokes.iter().flat_map(|s| s.samples.iter())
    }

    pub fn start_time(&self) -> f64 {
        self.samples().next().map(|s| s.t).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "0")]
    Hc = 0,
    #[serde(rename = "1")]
    Ad = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_bool(ad: bool) -> Self {
        if ad {
            Label::Ad
        } else {
            Label::Hc
        }
    }

    pub fn is_ad(self) -> bool {
        self == Label::Ad
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hc => "HC",
            Label::Ad => "AD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Work {
    Intellectual,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: Label,
    pub sex: Sex,
    pub age: f64,
    pub work: Work,
    pub education: f64,
}

/// Numeric encoding of the four demographic statics, in the fixed order
/// (sex, age, work, education). Values are not rescaled.
pub fn encode_statics(s: &SubjectRecord) -> Result<[f64; 4]> {
    let bad = |reason: &str| Error::InvalidSubject {
        subject: s.subject_id.clone(),
        reason: reason.to_string(),
    };
    if !s.age.is_finite() || s.age <= 0.0 {
        return Err(bad("age must be positive"));
    }
    if !s.education.is_finite() || s.education < 0.0 {
        return Err(bad("education must be non-negative"));
    }
    let sex = match s.sex {
        Sex::Female => 0.0,
        Sex::Male => 1.0,
    };
    let work = match s.work {
        Work::Intellectual => 0.0,
        Work::Manual => 1.0,
    };
    Ok([sex, s.age, work, s.education])
}

/// Per-stroke feature vector in canonical order (see [`crate::kinematics::FEATURE_NAMES`]).
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeFeatureVector(pub Vec<f64>);

impl StrokeFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fixed-length window of stroke feature rows, ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// Row-major `[rows x cols]` matrix.
    pub window: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub task_id: usize,
    pub statics: [f64; 4],
    pub subject_id: String,
    pub label: Label,
}

impl WindowBatch {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.window[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.window[r * self.cols + c]
    }
}

/// Per-stroke feature rows of one (subject, task) recording, in stroke order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFeatures {
    pub subject_id: String,
    pub task_id: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    TaskOutOfRange(usize),
    StrokeIndexGap { expected: usize, found: usize },
    TooFewSamples(usize),
    MixedPenState,
    NonMonotonicTime { dt: f64 },
    IrregularSampling { dt: f64 },
    InAirPressure(f64),
    NegativePressure(f64),
    NonFinite,
}

/// One invariant violation. `stroke` is the 1-based stroke position and
/// `sample` the 0-based sample offset within that stroke, when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub stroke: Option<usize>,
    pub sample: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::TaskOutOfRange(t) => write!(f, "task id {t} outside 1..={N_TASKS}")?,
            ViolationKind::StrokeIndexGap { expected, found } => {
                write!(f, "stroke index {found}, expected {expected}")?
            }
            ViolationKind::TooFewSamples(n) => write!(f, "stroke has {n} samples (< 2)")?,
            ViolationKind::MixedPenState => f.write_str("mixed pen state within stroke")?,
            ViolationKind::NonMonotonicTime { dt } => write!(f, "non-monotonic time (dt = {dt})")?,
            ViolationKind::IrregularSampling { dt } => write!(f, "irregular sampling (dt = {dt})")?,
            ViolationKind::InAirPressure(p) => write!(f, "in-air pressure {p}")?,
            ViolationKind::NegativePressure(p) => write!(f, "negative pressure {p}")?,
            ViolationKind::NonFinite => f.write_str("non-finite value")?,
        }
        if let Some(s) = self.stroke {
            write!(f, " at stroke {s}")?;
        }
        if let Some(i) = self.sample {
            write!(f, ", sample {i}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a recording and reports each
/// violation with its location. An empty list means the recording is valid.
pub fn validate_recording(rec: &TaskRecording) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = |kind, stroke: Option<usize>, sample: Option<usize>| Violation {
        kind,
        stroke,
        sample,
    };
    if rec.task_id < 1 || rec.task_id > N_TASKS {
        out.push(v(ViolationKind::TaskOutOfRange(rec.task_id), None, None));
    }
    let mut prev_t: Option<f64> = None;
    for (pos, stroke) in rec.strokes.iter().enumerate() {
        let sidx = pos + 1;
        if stroke.index != sidx {
            out.push(v(
                ViolationKind::StrokeIndexGap {
                    expected: sidx,
                    found: stroke.index,
                },
                Some(sidx),
                None,
            ));
        }
        if stroke.samples.len() < 2 {
            out.push(v(ViolationKind::TooFewSamples(stroke.samples.len()), Some(sidx), None));
        }
        if let Some(first) = stroke.samples.first() {
            if stroke.samples.iter().any(|s| s.on_paper != first.on_paper) {
                out.push(v(ViolationKind::MixedPenState, Some(sidx), None));
            }
        }
        for (i, s) in stroke.samples.iter().enumerate() {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite() && s.pressure.is_finite()) {
                out.push(v(ViolationKind::NonFinite, Some(sidx), Some(i)));
                continue;
            }
            if s.pressure < 0.0 {
                out.push(v(ViolationKind::NegativePressure(s.pressure), Some(sidx), Some(i)));
            } else if !s.on_paper && s.pressure != 0.0 {
                out.push(v(ViolationKind::InAirPressure(s.pressure), Some(sidx), Some(i)));
            }
            if let Some(p) = prev_t {
                let dt = s.t - p;
                if dt < 0.0 {
                    out.push(v(ViolationKind::NonMonotonicTime { dt }, Some(sidx), Some(i)));
                } else if (dt - SAMPLE_PERIOD).abs() > PERIOD_TOLERANCE * SAMPLE_PERIOD {
                    out.push(v(ViolationKind::IrregularSampling { dt }, Some(sidx), Some(i)));
                }
            }
            prev_t = Some(s.t);
        }
    }
    out
}
