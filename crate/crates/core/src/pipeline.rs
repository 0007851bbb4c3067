//! Fold-level training and evaluation of the recurrent models.
//!
//! Per fold: robust scaling fitted on training subjects only, sliding
//! windows per (subject, task), per-window standardization, minibatch AdamW
//! on class-weighted BCE with half-epoch validation, then subject-level
//! decisions on the test subjects.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    self, fold_seed, subject_decision, Confusion, FoldAssignment, FoldResult, ResultsFile,
};
use crate::model::{encode_statics, Label, SubjectRecord, TaskFeatures, WindowBatch};
use crate::neural::{self, dropout_mask, EncoderConfig, ModelParams};
use crate::optim::{
    self, class_weights, clip_gradients, weighted_bce, weighted_bce_dlogit, EarlyStopping, OptimState,
    PlateauScheduler, StopDecision, TrainLog,
};
use crate::preprocessing::{make_windows, robust_fit, robust_transform, window_standardize_in_place, WindowMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on epochs; early stopping usually ends sooner.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub lr_patience: usize,
    /// Measured in half-epoch validations.
    pub early_stop_patience: usize,
    pub folds: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: optim::DEFAULT_LR,
            weight_decay: optim::DEFAULT_WEIGHT_DECAY,
            max_grad_norm: optim::MAX_GRAD_NORM,
            lr_patience: 5,
            early_stop_patience: 10,
            folds: eval::DEFAULT_FOLDS,
            val_fraction: eval::DEFAULT_VAL_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("lr and max_grad_norm must be positive, weight_decay non-negative".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// Subjects plus their per-task stroke features, in (subject, task) order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    pub features: Vec<TaskFeatures>,
}

impl Dataset {
    /// Checks that every feature table belongs to a known subject and sorts
    /// both collections so downstream results do not depend on input order.
    pub fn new(mut subjects: Vec<SubjectRecord>, mut features: Vec<TaskFeatures>) -> Result<Self> {
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        let ids: BTreeSet<&str> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
        if ids.len() != subjects.len() {
            return Err(Error::Config("duplicate subject ids".into()));
        }
        for f in &features {
            if !ids.contains(f.subject_id.as_str()) {
                return Err(Error::InvalidSubject {
                    subject: f.subject_id.clone(),
                    reason: "features reference an unknown subject".into(),
                });
            }
        }
        features.sort_by(|a, b| (&a.subject_id, a.task_id).cmp(&(&b.subject_id, b.task_id)));
        Ok(Self { subjects, features })
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects
            .binary_search_by(|s| s.subject_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.subjects[i])
    }

    pub fn feature_dim(&self) -> usize {
        self.features.iter().find_map(|f| f.rows.first().map(Vec::len)).unwrap_or(0)
    }

    /// All stroke rows of the given subjects.
    pub fn rows_of(&self, ids: &BTreeSet<&str>) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .filter(|f| ids.contains(f.subject_id.as_str()))
            .flat_map(|f| f.rows.iter().cloned())
            .collect()
    }
}

/// Standardized windows for one fold, split by role.
#[derive(Debug, Clone, Default)]
pub struct FoldWindows {
    pub train: Vec<WindowBatch>,
    pub val: Vec<WindowBatch>,
    pub test: Vec<WindowBatch>,
}

/// Robust-scales with training-subject statistics, windows every task
/// recording and standardizes each window.
pub fn fold_windows(data: &Dataset, fold: &FoldAssignment, ws: usize, stride: usize) -> Result<FoldWindows> {
    if ws == 0 || stride == 0 {
        return Err(Error::Config("window size and stride must be positive".into()));
    }
    let train_ids: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let scaler = robust_fit(&data.rows_of(&train_ids))?;
    let role: BTreeMap<&str, u8> = fold
        .train
        .iter()
        .map(|s| (s.as_str(), 0))
        .chain(fold.val.iter().map(|s| (s.as_str(), 1)))
        .chain(fold.test.iter().map(|s| (s.as_str(), 2)))
        .collect();
    let mut out = FoldWindows::default();
    for f in &data.features {
        let Some(&r) = role.get(f.subject_id.as_str()) else { continue };
        if f.rows.is_empty() {
            continue;
        }
        let subject = data.subject(&f.subject_id).expect("dataset checked subjects");
        let meta = WindowMeta {
            task_id: f.task_id,
            statics: encode_statics(subject)?,
            subject_id: subject.subject_id.clone(),
            label: subject.label,
        };
        let scaled = robust_transform(&f.rows, &scaler)?;
        let mut windows = make_windows(&scaled, ws, stride, &meta);
        for w in &mut windows {
            window_standardize_in_place(w);
        }
        match r {
            0 => out.train.extend(windows),
            1 => out.val.extend(windows),
            _ => out.test.extend(windows),
        }
    }
    Ok(out)
}

pub fn predict_all(windows: &[WindowBatch], params: &ModelParams) -> Result<Vec<f64>> {
    windows.iter().map(|w| neural::predict(w, params)).collect()
}

/// Window-level confusion at the 0.5 threshold.
pub fn window_confusion(windows: &[WindowBatch], probs: &[f64]) -> Confusion {
    let decisions: Vec<Label> = probs.iter().map(|p| Label::from_bool(*p >= eval::DECISION_THRESHOLD)).collect();
    let labels: Vec<Label> = windows.iter().map(|w| w.label).collect();
    Confusion::from_pairs(&decisions, &labels)
}

/// Subject-level decisions from window probabilities, in subject-id order.
pub fn subject_decisions(windows: &[WindowBatch], probs: &[f64]) -> Vec<(String, Label, Label)> {
    let mut by_subject: BTreeMap<&str, (Label, Vec<f64>)> = BTreeMap::new();
    for (w, p) in windows.iter().zip(probs) {
        by_subject.entry(&w.subject_id).or_insert((w.label, Vec::new())).1.push(*p);
    }
    by_subject
        .into_iter()
        .map(|(s, (label, ps))| (s.to_string(), label, subject_decision(&ps)))
        .collect()
}

fn f1_fraction(c: &Confusion) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / den as f64
    }
}

/// Outcome of one trained fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub result: FoldResult,
    pub params: ModelParams,
    pub epochs_run: usize,
    /// CSV training log (`step,split,loss,f1,lr,grad_norm`).
    pub log: String,
}

/// Trains one fold from scratch and evaluates it on the fold's test subjects.
pub fn train_fold(
    windows: &FoldWindows,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    fold: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if windows.train.is_empty() {
        return Err(Error::EmptyFit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(enc, &mut rng)?;
    let labels: Vec<Label> = windows.train.iter().map(|w| w.label).collect();
    let weights = class_weights(&labels)?;
    let mut state = OptimState::new(params.len());
    state.lr = cfg.lr;
    state.weight_decay = cfg.weight_decay;
    let mut plateau = PlateauScheduler { patience: cfg.lr_patience, ..Default::default() };
    let mut early = EarlyStopping { patience: cfg.early_stop_patience, ..Default::default() };
    let mut log = TrainLog::new(Vec::new())?;
    let mut best = params.clone();

    let n = windows.train.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let half = batches_per_epoch.div_ceil(2);
    let hd = enc.directions() * enc.hidden;
    let names = params.manifest().to_vec();
    let name_of = |k: usize| {
        names
            .iter()
            .find(|e| e.range().contains(&k))
            .map(|e| format!("{}[{}]", e.name, k - e.offset))
            .unwrap_or_else(|| k.to_string())
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = vec![0.0; params.len()];
    let mut epochs_run = 0;
    let mut last_val_f1 = 0.0;
    'epochs: for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let mut probs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let w = &windows.train[i];
                let mask = (enc.dropout > 0.0).then(|| dropout_mask(hd, enc.dropout, &mut rng));
                let tr = neural::forward(w, &params, mask.as_deref())?;
                let d = weighted_bce_dlogit(tr.prob(), w.label, weights, chunk.len());
                neural::backward_logit(&tr, d, &params, &mut grads);
                probs.push(tr.prob());
                ys.push(w.label);
            }
            let loss = weighted_bce(&probs, &ys, weights);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("fold {fold}, epoch {epoch}, batch {b}")));
            }
            let norm = clip_gradients(&mut grads, cfg.max_grad_norm);
            optim::adamw_step(params.values_mut(), &grads, &mut state, &name_of)?;
            log.record(state.step, "train", loss, None, state.lr, Some(norm))?;

            let end_of_epoch = b + 1 == batches_per_epoch;
            if b + 1 == half || end_of_epoch {
                let (val_loss, val_f1) = if windows.val.is_empty() {
                    (loss, 1.0 - loss.min(1.0))
                } else {
                    let vp = predict_all(&windows.val, &params)?;
                    let vy: Vec<Label> = windows.val.iter().map(|w| w.label).collect();
                    (weighted_bce(&vp, &vy, weights), f1_fraction(&window_confusion(&windows.val, &vp)))
                };
                if !val_loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!("fold {fold}, epoch {epoch}, validation")));
                }
                log.record(state.step, "val", val_loss, Some(val_f1), state.lr, None)?;
                last_val_f1 = val_f1;
                let (improved, decision) = early.update(val_f1);
                if improved {
                    best = params.clone();
                }
                if decision == StopDecision::Stop {
                    log::debug!("fold {fold}: early stop after {} epochs", epoch + 1);
                    break 'epochs;
                }
            }
        }
        state.lr = plateau.step(last_val_f1, state.lr);
    }
    let params = best;

    let probs = predict_all(&windows.test, &params)?;
    let decisions = subject_decisions(&windows.test, &probs);
    let (ys, ds): (Vec<Label>, Vec<Label>) = decisions.iter().map(|(_, y, d)| (*y, *d)).unzip();
    let result = FoldResult {
        fold,
        seed,
        n_test_subjects: decisions.len(),
        metrics: eval::confusion_metrics(&ds, &ys),
        window: Some(eval::metrics_from_confusion(&window_confusion(&windows.test, &probs))),
    };
    let log = String::from_utf8(log.into_inner()).expect("log is utf-8");
    Ok(FoldOutcome { result, params, epochs_run, log })
}

/// Runs `f` over `0..n` on up to `jobs` threads, returning results in index
/// order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, jobs: usize, f: F) -> Vec<T> {
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every index computed")).collect()
}

/// Full cross-validated run of one recurrent configuration.
pub struct CvRun {
    pub results: ResultsFile,
    pub folds: Vec<FoldOutcome>,
    pub assignments: Vec<FoldAssignment>,
}

impl TrainConfig {
    /// The fold assignment this configuration implies for `data`.
    pub fn folds_for(&self, data: &Dataset, seed_base: u64) -> Result<Vec<FoldAssignment>> {
        eval::stratified_subject_folds(&data.subjects, self.folds, seed_base, self.val_fraction)
    }
}

pub fn cross_validate_recurrent(
    data: &Dataset,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    ws: usize,
    stride: usize,
    seed_base: u64,
    jobs: usize,
) -> Result<CvRun> {
    let feature_dim = data.feature_dim();
    if feature_dim != enc.feature_dim {
        return Err(Error::DimensionMismatch { expected: enc.feature_dim, got: feature_dim });
    }
    let assignments = cfg.folds_for(data, seed_base)?;
    let outcomes = parallel_map(assignments.len(), jobs, |k| {
        let windows = fold_windows(data, &assignments[k], ws, stride)?;
        train_fold(&windows, enc, cfg, k, fold_seed(seed_base, k))
    });
    let folds = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let results = ResultsFile::new(
        enc.cell.name(),
        "recurrent",
        Some(ws),
        Some(stride),
        seed_base,
        folds.iter().map(|f| f.result.clone()).collect(),
    )?;
    Ok(CvRun { results, folds, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::extract_task_features;
    use crate::neural::CellKind;
    use crate::synth::{generate_cohort, GeneratorConfig};

    pub(crate) fn small_dataset(n: usize, tasks: usize, seed: u64) -> Dataset {
        let cfg = GeneratorConfig { seed, n_ad: n, n_hc: n, tasks: (1..=tasks).collect(), ..Default::default() };
        let (subjects, recs) = generate_cohort(&cfg).unwrap();
        let feats = recs.iter().map(|r| extract_task_features(r).unwrap()).collect();
        Dataset::new(subjects, feats).unwrap()
    }

    #[test]
    fn no_subject_leaks_across_roles() {
        let data = small_dataset(6, 3, 1);
        let folds = eval::stratified_subject_folds(&data.subjects, 5, 9, 0.15).unwrap();
        for f in &folds {
            let w = fold_windows(&data, f, 8, 2).unwrap();
            for x in &w.test {
                assert!(!f.train.contains(&x.subject_id) && !f.val.contains(&x.subject_id));
            }
            for x in &w.train {
                assert!(f.train.contains(&x.subject_id));
            }
            assert!(!w.val.is_empty() && !w.test.is_empty());
        }
    }

    #[test]
    fn scaler_ignores_test_rows() {
        let data = small_dataset(5, 2, 2);
        let folds = eval::stratified_subject_folds(&data.subjects, 5, 0, 0.15).unwrap();
        let f = &folds[0];
        let a = fold_windows(&data, f, 6, 3).unwrap();
        let mut perturbed = data.clone();
        for t in &mut perturbed.features {
            if f.test.contains(&t.subject_id) {
                for r in &mut t.rows {
                    r[0] += 1000.0;
                }
            }
        }
        let b = fold_windows(&perturbed, f, 6, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
    }

    #[test]
    fn tiny_training_run_is_deterministic() {
        let data = small_dataset(5, 2, 3);
        let enc = EncoderConfig { cell: CellKind::Gru, hidden: 4, feature_dim: data.feature_dim(), ..Default::default() };
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..Default::default() };
        let a = cross_validate_recurrent(&data, &enc, &cfg, 6, 3, 11, 1).unwrap();
        let b = cross_validate_recurrent(&data, &enc, &cfg, 6, 3, 11, 2).unwrap();
        assert_eq!(a.results.to_json(), b.results.to_json());
        assert_eq!(a.results.per_fold.len(), 5);
        assert!(a.folds[0].log.starts_with("step,split,loss,f1,lr,grad_norm\n1,train,"));
    }

    #[test]
    fn subject_decisions_group_windows() {
        let mk = |s: &str, label| WindowBatch {
            window: vec![],
            rows: 0,
            cols: 0,
            task_id: 1,
            statics: [0.0; 4],
            subject_id: s.into(),
            label,
        };
        let ws = vec![mk("B", Label::Hc), mk("A", Label::Ad), mk("B", Label::Hc), mk("A", Label::Ad)];
        let d = subject_decisions(&ws, &[0.2, 0.4, 0.9, 0.6]);
        assert_eq!(d, vec![("A".into(), Label::Ad, Label::Ad), ("B".into(), Label::Hc, Label::Ad)]);
    }
}
