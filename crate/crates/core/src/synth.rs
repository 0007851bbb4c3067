//! Seeded generator of synthetic handwriting cohorts.
//!
//! Each task recording is a chain of alternating pen-down writing segments
//! and in-air hover segments. A segment follows a smooth chord with a
//! sinusoidal lateral bend, sampled on the 200 Hz grid, plus Gaussian
//! position noise. Subjects carry style offsets (size, speed, slant,
//! pressure) drawn once per subject. Style offsets are stratified within
//! each class so both classes see the same style distribution and class
//! differences come only from the injected [`ClassEffect`].

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{segment_strokes, SegmentationMode};
use crate::model::{
    Label, PenSample, Sex, SubjectRecord, TaskRecording, Work, N_TASKS, SAMPLE_PERIOD,
};

/// Multiplicative class differences applied to AD trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassEffect {
    /// Multiplier on pen-down writing speed.
    pub velocity_scale: f64,
    /// Multiplier on the high-frequency position noise while writing.
    pub jerk_scale: f64,
    /// Multiplier on in-air pause durations.
    pub pause_scale: f64,
}

impl Default for ClassEffect {
    fn default() -> Self {
        ClassEffect {
            velocity_scale: 0.7,
            jerk_scale: 1.5,
            pause_scale: 1.4,
        }
    }
}

impl ClassEffect {
    pub const NULL: ClassEffect = ClassEffect {
        velocity_scale: 1.0,
        jerk_scale: 1.0,
        pause_scale: 1.0,
    };

    /// The effect raised to `exponent` componentwise.
    pub fn powf(&self, exponent: f64) -> ClassEffect {
        ClassEffect {
            velocity_scale: self.velocity_scale.powf(exponent),
            jerk_scale: self.jerk_scale.powf(exponent),
            pause_scale: self.pause_scale.powf(exponent),
        }
    }
}

/// How the class effect is laid over a task's strokes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMode {
    /// Every AD stroke carries the full effect.
    Static,
    /// AD strokes drift from the inverse effect at the first stroke to the
    /// full effect at the last one (log-symmetric, so the per-stroke average
    /// effect is neutral and only the within-task trend differs).
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_ad: usize,
    pub n_hc: usize,
    pub tasks: Vec<usize>,
    /// Inclusive range of samples per baseline (HC) stroke.
    pub samples_per_stroke: (usize, usize),
    /// Inclusive range of strokes per task recording.
    pub strokes_per_task: (usize, usize),
    pub effect: ClassEffect,
    pub effect_mode: EffectMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            n_ad: 30,
            n_hc: 30,
            tasks: (1..=N_TASKS).collect(),
            samples_per_stroke: (16, 40),
            strokes_per_task: (9, 25),
            effect: ClassEffect::default(),
            effect_mode: EffectMode::Static,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ad == 0 || self.n_hc == 0 {
            return Err(Error::SingleClass {
                hc: self.n_hc,
                ad: self.n_ad,
            });
        }
        if self.tasks.is_empty() || self.tasks.iter().any(|t| *t < 1 || *t > N_TASKS) {
            return Err(Error::Config(format!("tasks must be a non-empty subset of 1..={N_TASKS}")));
        }
        let (lo, hi) = self.samples_per_stroke;
        if lo < 5 || lo > hi {
            return Err(Error::Config(format!(
                "samples_per_stroke {lo}..={hi} must be non-empty with a minimum of 5"
            )));
        }
        let (lo, hi) = self.strokes_per_task;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("strokes_per_task {lo}..={hi} must be non-empty")));
        }
        let e = self.effect;
        if !(e.velocity_scale > 0.0 && e.jerk_scale > 0.0 && e.pause_scale > 0.0) {
            return Err(Error::Config("class effect multipliers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Writing,
    Hover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Constant speed along the chord.
    Linear,
    /// Bell-shaped speed profile, zero velocity at both ends.
    Smooth,
}

/// One pen movement, before sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: (f64, f64),
    pub displacement: (f64, f64),
    /// Amplitude of the lateral sinusoidal deviation.
    pub bend: f64,
    /// Number of half-waves of lateral deviation.
    pub waves: f64,
    pub profile: Profile,
    /// Movement time in seconds.
    pub duration: f64,
    /// Stationary time before the movement (hover only).
    pub pause: f64,
    /// Standard deviation of additive position noise.
    pub noise: f64,
    pub pressure: f64,
}

impl Segment {
    fn position(&self, u: f64) -> (f64, f64) {
        let progress = match self.profile {
            Profile::Linear => u,
            Profile::Smooth => u - (2.0 * PI * u).sin() / (2.0 * PI),
        };
        let (dx, dy) = self.displacement;
        let len = dx.hypot(dy).max(1e-12);
        let (nx, ny) = (-dy / len, dx / len);
        let lateral = self.bend * (PI * self.waves * u).sin();
        (
            self.start.0 + dx * progress + nx * lateral,
            self.start.1 + dy * progress + ny * lateral,
        )
    }

    pub fn end(&self) -> (f64, f64) {
        self.position(1.0)
    }
}

/// A pen trajectory as an ordered chain of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
}

/// Applies the class effect to a baseline trajectory. HC trajectories are
/// returned unchanged. For AD, writing segments are slowed by
/// `velocity_scale` and get `jerk_scale` times the noise, and hover pauses
/// are stretched by `pause_scale`.
pub fn inject_class_effect(traj: &Trajectory, label: Label, effect: &ClassEffect) -> Trajectory {
    inject_with_mode(traj, label, effect, EffectMode::Static)
}

pub fn inject_with_mode(
    traj: &Trajectory,
    label: Label,
    effect: &ClassEffect,
    mode: EffectMode,
) -> Trajectory {
    if label == Label::Hc {
        return traj.clone();
    }
    let m = traj.segments.len();
    let segments = traj
        .segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let e = match mode {
                EffectMode::Static => *effect,
                EffectMode::Drift => {
                    let p = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.5 };
                    effect.powf(2.0 * p - 1.0)
                }
            };
            let mut s = seg.clone();
            match s.kind {
                SegmentKind::Writing => {
                    s.duration /= e.velocity_scale;
                    s.noise *= e.jerk_scale;
                }
                SegmentKind::Hover => s.pause *= e.pause_scale,
            }
            s
        })
        .collect();
    Trajectory { segments }
}

/// Samples a trajectory on the 200 Hz grid starting at sample index
/// `first_index`. Each segment yields at least five samples.
pub fn render(traj: &Trajectory, first_index: usize, rng: &mut impl Rng) -> Vec<PenSample> {
    let mut out = Vec::new();
    let mut k = first_index;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    for seg in &traj.segments {
        let total = seg.pause + seg.duration;
        let m = ((total / SAMPLE_PERIOD).round() as usize + 1).max(5);
        let span = (m - 1) as f64 * SAMPLE_PERIOD;
        let moving = (span - seg.pause).max(SAMPLE_PERIOD);
        let on = seg.kind == SegmentKind::Writing;
        for j in 0..m {
            let tau = j as f64 * SAMPLE_PERIOD;
            let u = ((tau - seg.pause) / moving).clamp(0.0, 1.0);
            let (x, y) = seg.position(u);
            let nx: f64 = std_normal.sample(rng);
            let ny: f64 = std_normal.sample(rng);
            let pressure = if on {
                let np: f64 = std_normal.sample(rng);
                (seg.pressure * (0.8 + 0.2 * (PI * u).sin()) + 0.01 * np).max(0.01)
            } else {
                0.0
            };
            out.push(PenSample {
                t: k as f64 * SAMPLE_PERIOD,
                x: x + seg.noise * nx,
                y: y + seg.noise * ny,
                pressure,
                on_paper: on,
            });
            k += 1;
        }
    }
    out
}

/// Per-subject style offsets.
#[derive(Debug, Clone, Copy)]
struct Style {
    size: f64,
    speed: f64,
    slant: f64,
    pressure: f64,
}

/// Shared geometry of one task.
#[derive(Debug, Clone, Copy)]
struct TaskTemplate {
    length: f64,
    bend: f64,
    waves: f64,
    direction: f64,
    gap: f64,
}

const WRITING_NOISE: f64 = 0.02;
const HOVER_NOISE: f64 = 0.02;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn task_template(seed: u64, task: usize) -> TaskTemplate {
    let mut rng = rng_for(seed, 1 << 40 | task as u64);
    TaskTemplate {
        length: rng.gen_range(4.0..14.0),
        bend: rng.gen_range(0.5..3.0),
        waves: rng.gen_range(1.0..3.0),
        direction: rng.gen_range(-PI..PI),
        gap: rng.gen_range(2.0..6.0),
    }
}

/// Stratified log-uniform style factors: one stratum per subject of the
/// class, shuffled, jittered within the stratum.
fn class_styles(rng: &mut ChaCha8Rng, n: usize) -> Vec<Style> {
    let mut draw = |spread: f64| -> Vec<f64> {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        strata
            .into_iter()
            .map(|s| {
                let q = (s as f64 + rng.gen::<f64>()) / n as f64;
                spread * (2.0 * q - 1.0) * 3f64.sqrt()
            })
            .collect()
    };
    let size = draw(0.08);
    let speed = draw(0.06);
    let slant = draw(0.15);
    let pressure = draw(0.10);
    (0..n)
        .map(|i| Style {
            size: size[i].exp(),
            speed: speed[i].exp(),
            slant: slant[i],
            pressure: pressure[i].exp(),
        })
        .collect()
}

fn baseline_trajectory(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    template: &TaskTemplate,
    style: &Style,
    n_strokes: usize,
) -> Trajectory {
    let mut segments = Vec::with_capacity(n_strokes);
    let mut cursor = (rng.gen_range(10.0..30.0), rng.gen_range(60.0..200.0));
    let (lo, hi) = cfg.samples_per_stroke;
    for i in 0..n_strokes {
        let base_samples = rng.gen_range(lo..=hi) as f64;
        let time = (base_samples - 1.0) * SAMPLE_PERIOD / style.speed;
        let seg = if i % 2 == 0 {
            let len = template.length * style.size * rng.gen_range(0.6..1.4);
            let dir = template.direction + style.slant + rng.gen_range(-0.4..0.4);
            Segment {
                kind: SegmentKind::Writing,
                start: cursor,
                displacement: (len * dir.cos(), len * dir.sin()),
                bend: template.bend * style.size * rng.gen_range(0.5..1.5),
                waves: template.waves,
                profile: Profile::Smooth,
                duration: time,
                pause: 0.0,
                noise: WRITING_NOISE,
                pressure: 0.5 * style.pressure,
            }
        } else {
            let pause_frac = rng.gen_range(0.2..0.5);
            let gap = template.gap * style.size * rng.gen_range(0.7..1.3);
            Segment {
                kind: SegmentKind::Hover,
                start: cursor,
                displacement: (gap, rng.gen_range(-1.5..1.5)),
                bend: rng.gen_range(0.2..1.0),
                waves: 1.0,
                profile: Profile::Smooth,
                duration: time * (1.0 - pause_frac),
                pause: time * pause_frac,
                noise: HOVER_NOISE,
                pressure: 0.0,
            }
        };
        cursor = seg.end();
        segments.push(seg);
    }
    Trajectory { segments }
}

fn demographics(rng: &mut ChaCha8Rng, id: String, label: Label) -> SubjectRecord {
    // Cohort means, standard deviations and sex ratios per class.
    let (age_mu, age_sd, edu_mu, edu_sd, p_female) = match label {
        Label::Ad => (71.5, 9.5, 10.8, 5.1, 46.0 / 90.0),
        Label::Hc => (68.9, 12.0, 12.9, 4.4, 51.0 / 90.0),
    };
    let age: f64 = Normal::new(age_mu, age_sd).expect("valid normal").sample(rng);
    let education: f64 = Normal::new(edu_mu, edu_sd).expect("valid normal").sample(rng);
    SubjectRecord {
        subject_id: id,
        label,
        sex: if rng.gen_bool(p_female) { Sex::Female } else { Sex::Male },
        age: age.clamp(45.0, 95.0),
        work: if rng.gen_bool(0.5) { Work::Intellectual } else { Work::Manual },
        education: education.clamp(0.0, 25.0),
    }
}

/// Subject identifier for the subject with the given 0-based ordinal.
pub fn subject_id(ordinal: usize) -> String {
    format!("S{:03}", ordinal + 1)
}

/// Generates a full cohort. Subjects `0..n_ad` are AD, the rest HC.
/// Output is sorted by (subject, task) and is a pure function of `cfg`.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<(Vec<SubjectRecord>, Vec<TaskRecording>)> {
    cfg.validate()?;
    let n = cfg.n_ad + cfg.n_hc;
    let mut style_rng = rng_for(cfg.seed, 0);
    let ad_styles = class_styles(&mut style_rng, cfg.n_ad);
    let hc_styles = class_styles(&mut style_rng, cfg.n_hc);
    let templates: Vec<TaskTemplate> = (0..=N_TASKS).map(|t| task_template(cfg.seed, t)).collect();
    let mut tasks = cfg.tasks.clone();
    tasks.sort_unstable();
    tasks.dedup();

    let mut subjects = Vec::with_capacity(n);
    let mut recordings = Vec::with_capacity(n * tasks.len());
    for ordinal in 0..n {
        let label = Label::from_bool(ordinal < cfg.n_ad);
        let style = if ordinal < cfg.n_ad {
            ad_styles[ordinal]
        } else {
            hc_styles[ordinal - cfg.n_ad]
        };
        let id = subject_id(ordinal);
        let mut subject_rng = rng_for(cfg.seed, ordinal as u64 + 1);
        subjects.push(demographics(&mut subject_rng, id.clone(), label));
        for &task in &tasks {
            let mut rng = rng_for(cfg.seed, ((ordinal as u64 + 1) << 16) | task as u64);
            let (lo, hi) = cfg.strokes_per_task;
            let n_strokes = rng.gen_range(lo..=hi);
            let base = baseline_trajectory(&mut rng, cfg, &templates[task], &style, n_strokes);
            let traj = inject_with_mode(&base, label, &cfg.effect, cfg.effect_mode);
            let samples = render(&traj, 0, &mut rng);
            recordings.push(TaskRecording {
                subject_id: id.clone(),
                task_id: task,
                strokes: segment_strokes(&samples, SegmentationMode::PenState),
            });
        }
    }
    Ok((subjects, recordings))
}
