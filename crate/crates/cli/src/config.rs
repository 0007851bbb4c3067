//! Experiment configuration: a TOML file with dotted `--set key=value`
//! overrides layered on top.
//!
//! ```toml
//! seed_base = 42
//! output_dir = "runs/demo"
//!
//! [generator]
//! n_ad = 30
//! n_hc = 30
//!
//! [grid]
//! ws = [60, 70, 80]
//! stride = [1, 2, 5]
//!
//! [model]
//! cells = ["rnn", "lstm", "gru"]
//! hidden = [128, 256]
//!
//! [train]
//! epochs = 50
//! batch_size = 64
//! ```
//!
//! Every key is optional; missing keys take the defaults shown by
//! `strokeseq report --show-config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use strokeseq::ensembles::EnsembleConfig;
use strokeseq::neural::{CellKind, EncoderConfig};
use strokeseq::pipeline::TrainConfig;
use strokeseq::synth::GeneratorConfig;

/// Configuration problems map to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub ws: Vec<usize>,
    pub stride: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self { ws: vec![60, 70, 80], stride: vec![1, 2, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub cells: Vec<CellKind>,
    pub hidden: Vec<usize>,
    pub bidirectional: bool,
    pub dropout: f64,
    pub embed_dim: usize,
    pub layer_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            cells: vec![CellKind::Rnn, CellKind::Lstm, CellKind::Gru],
            hidden: vec![128, 256],
            bidirectional: e.bidirectional,
            dropout: e.dropout,
            embed_dim: e.embed_dim,
            layer_norm: e.layer_norm,
        }
    }
}

impl ModelSection {
    pub fn encoder(&self, cell: CellKind, hidden: usize, feature_dim: usize) -> EncoderConfig {
        EncoderConfig {
            cell,
            hidden,
            bidirectional: self.bidirectional,
            dropout: self.dropout,
            embed_dim: self.embed_dim,
            feature_dim,
            layer_norm: self.layer_norm,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Worker threads for folds; `--jobs` overrides.
    pub jobs: usize,
    pub generator: GeneratorConfig,
    pub grid: Grid,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed_base: 42,
            output_dir: PathBuf::from("out"),
            jobs: 1,
            generator: GeneratorConfig::default(),
            grid: Grid::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        let nonzero = |v: &[usize]| !v.is_empty() && v.iter().all(|x| *x > 0);
        if !nonzero(&self.grid.ws) || !nonzero(&self.grid.stride) {
            return Err(bad("grid.ws and grid.stride must be non-empty lists of positive integers"));
        }
        if self.model.cells.is_empty() || !nonzero(&self.model.hidden) {
            return Err(bad("model.cells and model.hidden must be non-empty"));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(bad(format!("model.dropout {} outside [0, 1)", self.model.dropout)));
        }
        if self.jobs == 0 {
            return Err(bad("jobs must be at least 1"));
        }
        self.generator.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses `key.path=value`, reading the value as TOML and falling back to a
/// bare string.
fn parse_override(s: &str) -> anyhow::Result<(Vec<String>, toml::Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| bad(format!("override `{s}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(bad(format!("override `{s}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("`{}` is not a table", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Reads the file (if any), applies overrides in order and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| bad(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| bad(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
