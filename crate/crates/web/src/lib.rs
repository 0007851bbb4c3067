//! Browser demo bindings. Each operation has a plain Rust entry point that
//! returns JSON (tested natively) and a thin `wasm_bindgen` wrapper.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use strokeseq::kinematics::{extract_task_features, FEATURE_NAMES};
use strokeseq::model::{Label, TaskRecording};
use strokeseq::neural::{encode_bidirectional, CellKind, EncoderConfig, ModelParams};
use strokeseq::synth::{generate_cohort, GeneratorConfig};
use strokeseq::tss::tss_grid_scan;
use strokeseq::Error;

#[derive(Serialize)]
struct DemoStroke {
    x: Vec<f64>,
    y: Vec<f64>,
    features: Vec<f64>,
}

#[derive(Serialize)]
struct DemoRecording {
    subject_id: String,
    label: &'static str,
    strokes: Vec<DemoStroke>,
}

#[derive(Serialize)]
struct StrokeDemo {
    task_id: usize,
    feature_names: Vec<&'static str>,
    recordings: Vec<DemoRecording>,
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Ad => "AD",
        Label::Hc => "HC",
    }
}

/// One AD and one HC subject writing the same task.
fn pair(seed: u64, task_id: usize) -> strokeseq::Result<Vec<(Label, TaskRecording)>> {
    let cfg = GeneratorConfig {
        seed,
        n_ad: 1,
        n_hc: 1,
        tasks: vec![task_id],
        ..Default::default()
    };
    cfg.validate()?;
    let (subjects, recs) = generate_cohort(&cfg)?;
    Ok(recs
        .into_iter()
        .map(|r| {
            let label = subjects.iter().find(|s| s.subject_id == r.subject_id).map(|s| s.label).unwrap_or(Label::Hc);
            (label, r)
        })
        .collect())
}

pub fn stroke_kinematics_json(seed: u64, task_id: usize) -> strokeseq::Result<String> {
    let mut recordings = Vec::new();
    for (label, rec) in pair(seed, task_id)? {
        let feats = extract_task_features(&rec)?;
        let strokes = rec
            .strokes
            .iter()
            .zip(feats.rows)
            .map(|(s, f)| DemoStroke {
                x: s.samples.iter().map(|p| p.x).collect(),
                y: s.samples.iter().map(|p| p.y).collect(),
                features: f,
            })
            .collect();
        recordings.push(DemoRecording { subject_id: rec.subject_id, label: label_name(label), strokes });
    }
    let out = StrokeDemo { task_id, feature_names: FEATURE_NAMES.to_vec(), recordings };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

fn parse_list(s: &str) -> strokeseq::Result<Vec<usize>> {
    let v: Vec<usize> = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Config(format!("not a positive integer: {t}"))))
        .collect::<strokeseq::Result<_>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err(Error::Config("grid lists need at least one positive integer".into()));
    }
    Ok(v)
}

/// Scans a window/stride grid over a small cohort. Grids are comma lists.
pub fn tss_surface_json(seed: u64, per_class: usize, windows: &str, strides: &str) -> strokeseq::Result<String> {
    let ws = parse_list(windows)?;
    let ss = parse_list(strides)?;
    let cfg = GeneratorConfig {
        seed,
        n_ad: per_class,
        n_hc: per_class,
        tasks: (1..=6).collect(),
        ..Default::default()
    };
    cfg.validate()?;
    let (_, recs) = generate_cohort(&cfg)?;
    let feats = recs.iter().map(extract_task_features).collect::<strokeseq::Result<Vec<_>>>()?;
    let surface = tss_grid_scan(&feats, &ws, &ss);
    #[derive(Serialize)]
    struct Out<'a> {
        windows: &'a [usize],
        strides: &'a [usize],
        cells: &'a [strokeseq::tss::TssComponents],
        argmax: usize,
    }
    let out = Out { windows: &ws, strides: &ss, cells: &surface.cells, argmax: surface.argmax };
    Ok(serde_json::to_string(&out).expect("plain data serializes"))
}

/// Runs an untrained forward encoder over the z-scored stroke features of an
/// AD and an HC recording and returns the hidden state after every stroke.
pub fn cell_trace_json(cell: &str, hidden: usize, layer_norm: bool, seed: u64) -> strokeseq::Result<String> {
    let cell: CellKind = cell.parse()?;
    if hidden == 0 || hidden > 16 {
        return Err(Error::Config("hidden must be in 1..=16".into()));
    }
    let enc = EncoderConfig { cell, hidden, bidirectional: false, embed_dim: 4, layer_norm, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(&enc, &mut rng)?;

    #[derive(Serialize)]
    struct Trace {
        label: &'static str,
        hs: Vec<Vec<f64>>,
    }
    let mut traces = Vec::new();
    for (label, rec) in pair(seed, 1)? {
        let rows = extract_task_features(&rec)?.rows;
        let emb = params.embedding_row(rec.task_id)?.to_vec();
        let inputs: Vec<Vec<f64>> = zscore(&rows)
            .into_iter()
            .map(|mut r| {
                r.extend_from_slice(&emb);
                r
            })
            .collect();
        let (_, dirs) = encode_bidirectional(&inputs, &params);
        traces.push(Trace { label: label_name(label), hs: dirs[0].hs.clone() });
    }
    Ok(serde_json::to_string(&traces).expect("plain data serializes"))
}

fn zscore(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows.first().map_or(0, Vec::len);
    let mut out = rows.to_vec();
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in &mut out {
            r[k] = if sd > 1e-12 { (r[k] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn stroke_kinematics(seed: u32, task_id: u32) -> Result<String, JsValue> {
    stroke_kinematics_json(seed as u64, task_id as usize).map_err(js_err)
}

#[wasm_bindgen]
pub fn tss_surface(seed: u32, per_class: u32, windows: &str, strides: &str) -> Result<String, JsValue> {
    tss_surface_json(seed as u64, per_class as usize, windows, strides).map_err(js_err)
}

#[wasm_bindgen]
pub fn cell_trace(cell: &str, hidden: u32, layer_norm: bool, seed: u32) -> Result<String, JsValue> {
    cell_trace_json(cell, hidden as usize, layer_norm, seed as u64).map_err(js_err)
}
