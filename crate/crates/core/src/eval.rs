//! Subject-level stratified cross-validation, per-fold metrics and their
//! aggregation into the results file.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, SubjectRecord};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;
pub const DECISION_THRESHOLD: f64 = 0.5;
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldAssignment {
    pub fn role(&self, subject: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|s| s == subject);
        if has(&self.test) {
            Some("test")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.train) {
            Some("train")
        } else {
            None
        }
    }
}

/// `seed_base + fold_index`; seeds everything stochastic inside a fold.
pub fn fold_seed(seed_base: u64, fold_index: usize) -> u64 {
    seed_base.wrapping_add(fold_index as u64)
}

/// Splits subjects into `k` stratified folds.
///
/// Each class is sorted by id, shuffled with `seed_base` and dealt
/// round-robin; HC dealing resumes at the fold after the last AD subject so
/// fold sizes stay within one of each other. Each fold then holds out
/// `val_fraction` of its training subjects per class (at least one when the
/// class has two or more) as a validation set, shuffled with the fold seed.
pub fn stratified_subject_folds(
    subjects: &[SubjectRecord],
    k: usize,
    seed_base: u64,
    val_fraction: f64,
) -> Result<Vec<FoldAssignment>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let mut ad_ids = Vec::new();
    let mut hc_ids = Vec::new();
    for s in subjects {
        match s.label {
            Label::Ad => ad_ids.push(s.subject_id.clone()),
            Label::Hc => hc_ids.push(s.subject_id.clone()),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    let mut tests: Vec<Vec<(String, Label)>> = vec![Vec::new(); k];
    let mut next = 0;
    for (label, ids) in [(Label::Ad, &mut ad_ids), (Label::Hc, &mut hc_ids)] {
        if ids.len() < k {
            return Err(Error::TooFewSubjects { class: if label.is_ad() { "AD" } else { "HC" }, count: ids.len(), k });
        }
        ids.sort();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err(Error::Config("duplicate subject ids".into()));
        }
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            tests[next].push((id.clone(), label));
            next = (next + 1) % k;
        }
    }

    let all: Vec<(String, Label)> = tests.iter().flatten().cloned().collect();
    let mut folds = Vec::with_capacity(k);
    for (f, test) in tests.iter().enumerate() {
        let test_ids: BTreeSet<&String> = test.iter().map(|(s, _)| s).collect();
        let mut frng = ChaCha8Rng::seed_from_u64(fold_seed(seed_base, f));
        let mut train = Vec::new();
        let mut val = Vec::new();
        for label in [Label::Ad, Label::Hc] {
            let mut pool: Vec<String> = all
                .iter()
                .filter(|(s, l)| *l == label && !test_ids.contains(s))
                .map(|(s, _)| s.clone())
                .collect();
            pool.sort();
            pool.shuffle(&mut frng);
            let mut n_val = (pool.len() as f64 * val_fraction).round() as usize;
            if val_fraction > 0.0 && n_val == 0 && pool.len() >= 2 {
                n_val = 1;
            }
            val.extend(pool.drain(..n_val));
            train.extend(pool);
        }
        train.sort();
        val.sort();
        let mut test: Vec<String> = test.iter().map(|(s, _)| s.clone()).collect();
        test.sort();
        folds.push(FoldAssignment { fold: f, train, val, test });
    }
    Ok(folds)
}

/// Mean window probability thresholded at 0.5; exactly 0.5 counts as AD.
pub fn subject_decision(window_probs: &[f64]) -> Label {
    assert!(!window_probs.is_empty(), "subject has no windows");
    let mean = window_probs.iter().sum::<f64>() / window_probs.len() as f64;
    Label::from_bool(mean >= DECISION_THRESHOLD)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn from_pairs(decisions: &[Label], labels: &[Label]) -> Self {
        assert_eq!(decisions.len(), labels.len());
        let mut c = Confusion::default();
        for (d, y) in decisions.iter().zip(labels) {
            match (y, d) {
                (Label::Ad, Label::Ad) => c.tp += 1,
                (Label::Ad, Label::Hc) => c.fn_ += 1,
                (Label::Hc, Label::Hc) => c.tn += 1,
                (Label::Hc, Label::Ad) => c.fp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// Percentages; `None` marks a metric that is undefined on this fold (for
/// example sensitivity without AD subjects).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl MetricSet {
    pub fn values(&self) -> [Option<f64>; 4] {
        [self.accuracy, self.sensitivity, self.specificity, self.f1]
    }

    fn from_values(v: [Option<f64>; 4]) -> Self {
        Self { accuracy: v[0], sensitivity: v[1], specificity: v[2], f1: v[3] }
    }
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "sensitivity", "specificity", "f1"];

pub fn confusion_metrics(decisions: &[Label], labels: &[Label]) -> MetricSet {
    metrics_from_confusion(&Confusion::from_pairs(decisions, labels))
}

pub fn metrics_from_confusion(c: &Confusion) -> MetricSet {
    let m = MetricSet {
        accuracy: pct(c.tp + c.tn, c.total()),
        sensitivity: pct(c.tp, c.tp + c.fn_),
        specificity: pct(c.tn, c.tn + c.fp),
        f1: pct(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    };
    for (name, v) in METRIC_NAMES.iter().zip(m.values()) {
        if v.is_none() {
            log::warn!("{name} undefined on this fold (empty class); excluded from aggregation");
        }
    }
    m
}

/// Across-fold mean and sample standard deviation of every metric, skipping
/// folds where the metric is undefined.
pub fn aggregate_folds(per_fold: &[MetricSet]) -> Result<(MetricSet, MetricSet)> {
    if per_fold.len() < 2 {
        return Err(Error::Config(format!("aggregation needs at least 2 folds, got {}", per_fold.len())));
    }
    let mut mean = [None; 4];
    let mut std = [None; 4];
    for m in 0..4 {
        let xs: Vec<f64> = per_fold.iter().filter_map(|f| f.values()[m]).collect();
        if xs.is_empty() {
            continue;
        }
        let mu = xs.iter().sum::<f64>() / xs.len() as f64;
        mean[m] = Some(mu);
        std[m] = Some(if xs.len() > 1 {
            (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        } else {
            0.0
        });
    }
    Ok((MetricSet::from_values(mean), MetricSet::from_values(std)))
}

/// "mean (std)" with a fixed number of decimals; "n/a" when undefined.
pub fn format_mean_std(mean: Option<f64>, std: Option<f64>, decimals: usize) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.decimals$} ({s:.decimals$})"),
        _ => "n/a".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub n_test_subjects: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
    /// Window-level (or stroke-level) counterpart, for reference.
    pub window: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub model: String,
    /// "recurrent" or "ensemble".
    pub family: String,
    pub ws: Option<usize>,
    pub stride: Option<usize>,
    pub seed_base: u64,
    pub per_fold: Vec<FoldResult>,
    pub mean: MetricSet,
    pub std: MetricSet,
}

impl ResultsFile {
    pub fn new(model: &str, family: &str, ws: Option<usize>, stride: Option<usize>, seed_base: u64, per_fold: Vec<FoldResult>) -> Result<Self> {
        let metrics: Vec<MetricSet> = per_fold.iter().map(|f| f.metrics).collect();
        let (mean, std) = aggregate_folds(&metrics)?;
        Ok(Self {
            schema_version: RESULTS_SCHEMA_VERSION,
            model: model.into(),
            family: family.into(),
            ws,
            stride,
            seed_base,
            per_fold,
            mean,
            std,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != RESULTS_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { expected: RESULTS_SCHEMA_VERSION, found });
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Label used in comparison tables, e.g. `gru ws=60 s=1`.
    pub fn display_name(&self) -> String {
        match (self.ws, self.stride) {
            (Some(w), Some(s)) => format!("{} ws={w} s={s}", self.model),
            _ => self.model.clone(),
        }
    }
}

/// Merges results into a table sorted by mean accuracy (descending, stable
/// on ties so input order decides).
pub fn comparison_table(results: &[ResultsFile], decimals: usize) -> String {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = results[a].mean.accuracy.unwrap_or(f64::NEG_INFINITY);
        let kb = results[b].mean.accuracy.unwrap_or(f64::NEG_INFINITY);
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = String::from("model,family,accuracy,sensitivity,specificity,f1\n");
    for i in order {
        let r = &results[i];
        let cells: Vec<String> = (0..4)
            .map(|m| format_mean_std(r.mean.values()[m], r.std.values()[m], decimals))
            .collect();
        out.push_str(&format!("{},{},{}\n", r.display_name(), r.family, cells.join(",")));
    }
    out
}
