//! Bidirectional recurrent encoders (Elman RNN, LSTM, GRU) with task
//! embeddings, static-feature fusion and a logistic head.
//!
//! All parameters live in one flat `Vec<f64>` described by a manifest of
//! named shapes, which keeps the optimizer, gradient checks and checkpoints
//! trivial. Every gate matrix acts on the concatenation `[h_prev; x̃]`, so the
//! usual `W_hh`/`W_ih` pair is stored as the two column blocks of one matrix.

mod cell;
pub mod checkpoint;

pub use cell::{CellView, GateCache, StepCache, LN_EPS};
pub(crate) use cell::sigmoid;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{WindowBatch, N_TASKS};

/// Number of encoded subject statics appended to the hidden state.
pub const N_STATICS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub fn n_gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn => &["h"],
            CellKind::Lstm => &["f", "i", "C", "o"],
            CellKind::Gru => &["r", "z", "n"],
        }
    }

    fn has_bias(self) -> bool {
        // The GRU equations carry no bias terms.
        !matches!(self, CellKind::Gru)
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub bidirectional: bool,
    pub dropout: f64,
    pub embed_dim: usize,
    pub n_tasks: usize,
    pub feature_dim: usize,
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden: 128,
            bidirectional: true,
            dropout: 0.3,
            embed_dim: 32,
            n_tasks: N_TASKS,
            feature_dim: crate::kinematics::N_FEATURES,
            layer_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.n_tasks == 0 || self.feature_dim == 0 {
            return Err(Error::Config("n_tasks and feature_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of x̃ = [x; e_k].
    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.embed_dim
    }

    /// Width of the fused vector z_s = [h_final; p_s].
    pub fn fused_dim(&self) -> usize {
        self.directions() * self.hidden + N_STATICS
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one gate's blocks. `gain`/`beta` are present with layer norm;
/// `b` only without it, since a pre-norm bias is cancelled by centring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateOffsets {
    pub w: usize,
    pub b: Option<usize>,
    pub gain: Option<usize>,
    pub beta: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: EncoderConfig,
    manifest: Vec<ParamEntry>,
    gates: Vec<Vec<GateOffsets>>,
    embedding: usize,
    head_w: usize,
    head_b: usize,
    values: Vec<f64>,
}

struct LayoutBuilder {
    manifest: Vec<ParamEntry>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.manifest.push(ParamEntry { name, offset, shape });
        offset
    }
}

impl ModelParams {
    /// All-zero parameters with the layout implied by `config`.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut lb = LayoutBuilder { manifest: Vec::new(), next: 0 };
        let embedding = lb.push("embedding".into(), vec![config.n_tasks, config.embed_dim]);
        let (h, width) = (config.hidden, config.hidden + config.input_dim());
        let mut gates = Vec::new();
        for dir in ["fwd", "bwd"].iter().take(config.directions()) {
            let mut offs = Vec::new();
            for g in config.cell.gate_names() {
                let w = lb.push(format!("{dir}.W_{g}"), vec![h, width]);
                let mut off = GateOffsets { w, b: None, gain: None, beta: None };
                if config.layer_norm {
                    off.gain = Some(lb.push(format!("{dir}.ln_gain_{g}"), vec![h]));
                    off.beta = Some(lb.push(format!("{dir}.ln_beta_{g}"), vec![h]));
                } else if config.cell.has_bias() {
                    off.b = Some(lb.push(format!("{dir}.b_{g}"), vec![h]));
                }
                offs.push(off);
            }
            gates.push(offs);
        }
        let head_w = lb.push("head.w".into(), vec![config.fused_dim()]);
        let head_b = lb.push("head.b".into(), vec![1]);
        Ok(Self {
            config: config.clone(),
            values: vec![0.0; lb.next],
            manifest: lb.manifest,
            gates,
            embedding,
            head_w,
            head_b,
        })
    }

    /// Randomly initialized parameters.
    ///
    /// Gate matrices are uniform in ±1/√hidden, layer-norm gains are one,
    /// biases and offsets zero except the LSTM forget gate (one). Embeddings
    /// are standard normal. The head's hidden-state weights are uniform in
    /// ±1/√|z_s| and its statics weights start at zero, because the statics
    /// enter unscaled and age alone would otherwise swamp the first logits.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let emb = p.manifest[0].range();
        for v in &mut p.values[emb] {
            *v = normal.sample(rng);
        }
        for d in 0..p.gates.len() {
            for g in 0..p.gates[d].len() {
                let off = p.gates[d][g];
                let n = config.hidden * (config.hidden + config.input_dim());
                for v in &mut p.values[off.w..off.w + n] {
                    *v = uni.sample(rng);
                }
                let forget = config.cell == CellKind::Lstm && g == 0;
                if let Some(gain) = off.gain {
                    p.values[gain..gain + config.hidden].fill(1.0);
                }
                if forget {
                    if let Some(b) = off.b.or(off.beta) {
                        p.values[b..b + config.hidden].fill(1.0);
                    }
                }
            }
        }
        let hd = config.directions() * config.hidden;
        let hb = 1.0 / (config.fused_dim() as f64).sqrt();
        let head_uni = Uniform::new_inclusive(-hb, hb);
        for v in &mut p.values[p.head_w..p.head_w + hd] {
            *v = head_uni.sample(rng);
        }
        Ok(p)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn manifest(&self) -> &[ParamEntry] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.manifest.iter().find(|e| e.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.values[e.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.entry(name)?.range();
        Some(&mut self.values[r])
    }

    /// Cell parameters of direction `dir` (0 forward, 1 backward).
    pub fn cell(&self, dir: usize) -> CellView<'_> {
        CellView {
            kind: self.config.cell,
            hidden: self.config.hidden,
            input: self.config.input_dim(),
            values: &self.values,
            gates: &self.gates[dir],
        }
    }

    /// Embedding row of a 1-based task id.
    pub fn embedding_row(&self, task_id: usize) -> Result<&[f64]> {
        if task_id == 0 || task_id > self.config.n_tasks {
            return Err(Error::UnknownTask(task_id));
        }
        let e = self.config.embed_dim;
        let start = self.embedding + (task_id - 1) * e;
        Ok(&self.values[start..start + e])
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.values[self.head_w..self.head_w + self.config.fused_dim()]
    }

    pub fn head_bias(&self) -> f64 {
        self.values[self.head_b]
    }

    pub(crate) fn from_parts(config: EncoderConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(&config)?;
        if values.len() != p.values.len() {
            return Err(Error::DimensionMismatch { expected: p.values.len(), got: values.len() });
        }
        p.values = values;
        Ok(p)
    }
}

/// Builds x̃_t = [x_t; e_k] for every row of the window.
pub fn embed_and_concat(window: &WindowBatch, params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let cfg = params.config();
    if window.cols != cfg.feature_dim {
        return Err(Error::DimensionMismatch { expected: cfg.feature_dim, got: window.cols });
    }
    let e = params.embedding_row(window.task_id)?;
    Ok((0..window.rows)
        .map(|r| {
            let mut v = Vec::with_capacity(cfg.input_dim());
            v.extend_from_slice(window.row(r));
            v.extend_from_slice(e);
            v
        })
        .collect())
}

/// Elman step on direction `dir`.
pub fn rnn_step(params: &ModelParams, dir: usize, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    params.cell(dir).step(x, h_prev, &[], &mut StepCache::default()).0
}

/// LSTM step on direction `dir`; returns `(h, C)`.
pub fn lstm_step(params: &ModelParams, dir: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    params.cell(dir).step(x, h_prev, c_prev, &mut StepCache::default())
}

/// GRU step on direction `dir`.
pub fn gru_step(params: &ModelParams, dir: usize, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    params.cell(dir).step(x, h_prev, &[], &mut StepCache::default()).0
}

/// Per-direction activations of one encoder pass.
#[derive(Debug, Clone, Default)]
pub struct DirTrace {
    pub steps: Vec<StepCache>,
    /// Hidden states, `hs[0]` the zero initial state.
    pub hs: Vec<Vec<f64>>,
    pub cs: Vec<Vec<f64>>,
}

fn run_direction(view: CellView<'_>, inputs: &[Vec<f64>], reverse: bool) -> DirTrace {
    let h = view.hidden;
    let lstm = view.kind == CellKind::Lstm;
    let mut tr = DirTrace {
        steps: Vec::with_capacity(inputs.len()),
        hs: vec![vec![0.0; h]],
        cs: vec![if lstm { vec![0.0; h] } else { Vec::new() }],
    };
    for s in 0..inputs.len() {
        let t = if reverse { inputs.len() - 1 - s } else { s };
        let mut cache = StepCache::default();
        let (hn, cn) = view.step(&inputs[t], &tr.hs[s], &tr.cs[s], &mut cache);
        tr.steps.push(cache);
        tr.hs.push(hn);
        tr.cs.push(cn);
    }
    tr
}

/// Runs the encoder over x̃_1..x̃_T and returns `h_final` with the traces.
/// Bidirectional mode concatenates the forward h_T with the backward ←h_1.
pub fn encode_bidirectional(inputs: &[Vec<f64>], params: &ModelParams) -> (Vec<f64>, Vec<DirTrace>) {
    let cfg = params.config();
    let mut h_final = Vec::with_capacity(cfg.directions() * cfg.hidden);
    let mut traces = Vec::new();
    for dir in 0..cfg.directions() {
        let tr = run_direction(params.cell(dir), inputs, dir == 1);
        h_final.extend_from_slice(tr.hs.last().expect("initial state present"));
        traces.push(tr);
    }
    (h_final, traces)
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else 1/(1−p).
pub fn dropout_mask(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Output of the fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub z: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

/// z_s = [mask ∘ h_final; p_s] followed by the logistic head. Passing no mask
/// is evaluation mode.
pub fn fuse_and_classify(h_final: &[f64], statics: &[f64; N_STATICS], params: &ModelParams, mask: Option<&[f64]>) -> Fused {
    let mut z = Vec::with_capacity(params.config().fused_dim());
    match mask {
        Some(m) => z.extend(h_final.iter().zip(m).map(|(h, m)| h * m)),
        None => z.extend_from_slice(h_final),
    }
    z.extend_from_slice(statics);
    let logit = params.head_bias() + params.head_weights().iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
    Fused { prob: sigmoid(logit), logit, z }
}

/// Everything retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub task_id: usize,
    pub inputs: Vec<Vec<f64>>,
    pub dirs: Vec<DirTrace>,
    pub h_final: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub fused: Fused,
}

impl ForwardTrace {
    pub fn prob(&self) -> f64 {
        self.fused.prob
    }
}

/// Full forward pass. A `mask` from [`dropout_mask`] switches on training mode.
pub fn forward(window: &WindowBatch, params: &ModelParams, mask: Option<&[f64]>) -> Result<ForwardTrace> {
    if window.rows == 0 {
        return Err(Error::Config("empty window".into()));
    }
    if let Some(m) = mask {
        let want = params.config().directions() * params.config().hidden;
        if m.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: m.len() });
        }
    }
    let inputs = embed_and_concat(window, params)?;
    let (h_final, dirs) = encode_bidirectional(&inputs, params);
    let fused = fuse_and_classify(&h_final, &window.statics, params, mask);
    Ok(ForwardTrace {
        task_id: window.task_id,
        inputs,
        dirs,
        h_final,
        mask: mask.map(<[f64]>::to_vec),
        fused,
    })
}

/// Evaluation-mode probability.
pub fn predict(window: &WindowBatch, params: &ModelParams) -> Result<f64> {
    Ok(forward(window, params, None)?.prob())
}

/// Accumulates dLoss/dθ into `grads` given dLoss/dprob.
pub fn backward(trace: &ForwardTrace, dprob: f64, params: &ModelParams, grads: &mut [f64]) {
    let p = trace.fused.prob;
    backward_logit(trace, dprob * p * (1.0 - p), params, grads)
}

/// Same as [`backward`] but starting from dLoss/dlogit, which avoids the
/// vanishing `p(1−p)` factor when the head saturates.
pub fn backward_logit(trace: &ForwardTrace, dlogit: f64, params: &ModelParams, grads: &mut [f64]) {
    assert_eq!(grads.len(), params.len(), "gradient buffer does not match parameters");
    let cfg = params.config();
    let (h, hd) = (cfg.hidden, cfg.directions() * cfg.hidden);
    let hw = params.head_w;
    for (k, zk) in trace.fused.z.iter().enumerate() {
        grads[hw + k] += dlogit * zk;
    }
    grads[params.head_b] += dlogit;
    let w = params.head_weights();
    let mut dh_final: Vec<f64> = (0..hd).map(|k| dlogit * w[k]).collect();
    if let Some(m) = &trace.mask {
        for (d, m) in dh_final.iter_mut().zip(m) {
            *d *= m;
        }
    }

    let t_len = trace.inputs.len();
    let d_in = cfg.input_dim();
    let mut d_embed = vec![0.0; cfg.embed_dim];
    for (dir, tr) in trace.dirs.iter().enumerate() {
        let view = params.cell(dir);
        let mut dh = dh_final[dir * h..(dir + 1) * h].to_vec();
        let mut dc = vec![0.0; if cfg.cell == CellKind::Lstm { h } else { 0 }];
        for s in (0..t_len).rev() {
            let (dhp, dcp, dx) = view.step_backward(&tr.steps[s], &tr.hs[s], &dh, &dc, grads);
            for (acc, v) in d_embed.iter_mut().zip(&dx[cfg.feature_dim..d_in]) {
                *acc += v;
            }
            dh = dhp;
            dc = dcp;
        }
    }
    let start = params.embedding + (trace.task_id - 1) * cfg.embed_dim;
    for (k, v) in d_embed.into_iter().enumerate() {
        grads[start + k] += v;
    }
}

#[cfg(test)]
mod tests;
