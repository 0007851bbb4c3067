//! Stroke-level base learners trained per task, and the subject-level
//! aggregation strategies built on them: majority vote, weighted majority
//! vote, Borda ranking over tasks and a stacked logistic meta-learner.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, fold_seed, Confusion, FoldAssignment, FoldResult, ResultsFile};
use crate::model::{Label, TaskFeatures};
use crate::optim::{self, OptimState};
use crate::pipeline::{parallel_map, Dataset};
use crate::preprocessing::{robust_fit, robust_transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Logistic,
    DecisionStumpForest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mv,
    Wmv,
    Ranking,
    Stacking,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Mv, Strategy::Wmv, Strategy::Ranking, Strategy::Stacking];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mv => "mv",
            Strategy::Wmv => "wmv",
            Strategy::Ranking => "ranking",
            Strategy::Stacking => "stacking",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown ensemble strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub learners: Vec<LearnerKind>,
    pub n_stumps: usize,
    pub logistic_iters: usize,
    pub logistic_lr: f64,
    pub l2: f64,
    /// Tasks with fewer training strokes get no learners.
    pub min_strokes: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            learners: vec![LearnerKind::Logistic, LearnerKind::DecisionStumpForest],
            n_stumps: 32,
            logistic_iters: 300,
            logistic_lr: 0.05,
            l2: 1e-3,
            min_strokes: 10,
        }
    }
}

/// L2-regularized logistic regression fitted by full-batch Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Logistic {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        crate::neural::sigmoid(self.logit(x))
    }

    /// Class-balanced fit. Deterministic: no randomness is involved.
    pub fn fit(x: &[Vec<f64>], y: &[Label], iters: usize, lr: f64, l2: f64) -> Result<Self> {
        let dim = x.first().map(Vec::len).ok_or(Error::EmptyFit)?;
        let weights = optim::class_weights(y)?;
        let mut theta = vec![0.0; dim + 1];
        let mut state = OptimState::new(dim + 1);
        state.lr = lr;
        state.weight_decay = 0.0;
        let mut grad = vec![0.0; dim + 1];
        let n = x.len() as f64;
        for _ in 0..iters {
            grad.fill(0.0);
            for (row, label) in x.iter().zip(y) {
                let z = theta[dim] + theta[..dim].iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
                let wy = if label.is_ad() { weights.1 } else { weights.0 };
                let d = wy * (crate::neural::sigmoid(z) - label.as_f64()) / n;
                for (g, v) in grad.iter_mut().zip(row) {
                    *g += d * v;
                }
                grad[dim] += d;
            }
            for k in 0..dim {
                grad[k] += l2 * theta[k];
            }
            optim::adamw_step(&mut theta, &grad, &mut state, |k| format!("logistic[{k}]"))?;
        }
        let b = theta.pop().expect("bias present");
        Ok(Self { w: theta, b })
    }
}

/// One split on one feature with Laplace-smoothed leaf probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub p_left: f64,
    pub p_right: f64,
}

impl Stump {
    pub fn prob(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.threshold {
            self.p_left
        } else {
            self.p_right
        }
    }

    /// Gini-optimal stump over the given rows and candidate features.
    fn fit(x: &[Vec<f64>], y: &[Label], rows: &[usize], features: &[usize]) -> Self {
        let n = rows.len() as f64;
        let total_ad = rows.iter().filter(|&&r| y[r].is_ad()).count() as f64;
        let smooth = |ad: f64, count: f64| (ad + 1.0) / (count + 2.0);
        let gini = |ad: f64, count: f64| {
            if count == 0.0 {
                0.0
            } else {
                let p = ad / count;
                2.0 * p * (1.0 - p) * count
            }
        };
        let mut best = Stump { feature: features[0], threshold: f64::INFINITY, p_left: smooth(total_ad, n), p_right: 0.5 };
        let mut best_score = gini(total_ad, n);
        let mut sorted = rows.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            let mut left_ad = 0.0;
            for (i, &r) in sorted.iter().enumerate().take(sorted.len().saturating_sub(1)) {
                if y[r].is_ad() {
                    left_ad += 1.0;
                }
                let (v, next) = (x[r][f], x[sorted[i + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (i + 1) as f64;
                let score = gini(left_ad, nl) + gini(total_ad - left_ad, n - nl);
                if score < best_score - 1e-12 {
                    best_score = score;
                    best = Stump {
                        feature: f,
                        threshold: 0.5 * (v + next),
                        p_left: smooth(left_ad, nl),
                        p_right: smooth(total_ad - left_ad, n - nl),
                    };
                }
            }
        }
        best
    }
}

/// Bagged stumps, each fitted on a bootstrap sample with a random feature
/// subset of size ⌈√d⌉. Predicts the mean leaf probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpForest {
    pub stumps: Vec<Stump>,
}

impl StumpForest {
    pub fn fit<R: Rng>(x: &[Vec<f64>], y: &[Label], n_stumps: usize, rng: &mut R) -> Result<Self> {
        let dim = x.first().map(Vec::len).ok_or(Error::EmptyFit)?;
        let k = ((dim as f64).sqrt().ceil() as usize).clamp(1, dim);
        let stumps = (0..n_stumps.max(1))
            .map(|_| {
                let rows: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
                let mut feats = sample(rng, dim, k).into_vec();
                feats.sort();
                Stump::fit(x, y, &rows, &feats)
            })
            .collect();
        Ok(Self { stumps })
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| s.prob(x)).sum::<f64>() / self.stumps.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerModel {
    Logistic(Logistic),
    Forest(StumpForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLearner {
    pub task_id: usize,
    pub kind: LearnerKind,
    pub model: LearnerModel,
    /// Stroke-level accuracy on the fold's validation subjects, in [0, 1].
    pub val_accuracy: f64,
}

impl BaseLearner {
    pub fn prob(&self, x: &[f64]) -> f64 {
        match &self.model {
            LearnerModel::Logistic(m) => m.prob(x),
            LearnerModel::Forest(m) => m.prob(x),
        }
    }
}

/// Learners of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPool {
    pub task_id: usize,
    pub learners: Vec<BaseLearner>,
}

impl TaskPool {
    pub fn mean_val_accuracy(&self) -> f64 {
        self.learners.iter().map(|l| l.val_accuracy).sum::<f64>() / self.learners.len() as f64
    }
}

/// Labelled stroke rows grouped by task.
pub type TaskStrokes = BTreeMap<usize, (Vec<Vec<f64>>, Vec<Label>)>;

pub fn group_by_task<'a>(tables: impl IntoIterator<Item = (&'a TaskFeatures, Label)>) -> TaskStrokes {
    let mut out: TaskStrokes = BTreeMap::new();
    for (t, label) in tables {
        let e = out.entry(t.task_id).or_default();
        for r in &t.rows {
            e.0.push(r.clone());
            e.1.push(label);
        }
    }
    out
}

/// One learner per (task, kind). Tasks with too few strokes or a single
/// class are skipped with a warning.
pub fn train_base_learners(train: &TaskStrokes, val: &TaskStrokes, cfg: &EnsembleConfig, seed: u64) -> Result<Vec<TaskPool>> {
    let mut pools = Vec::new();
    for (&task, (x, y)) in train {
        if x.len() < cfg.min_strokes {
            log::warn!("task {task}: only {} training strokes, no learners", x.len());
            continue;
        }
        if y.iter().all(|l| *l == y[0]) {
            log::warn!("task {task}: single-class training strokes, no learners");
            continue;
        }
        let mut learners = Vec::new();
        for &kind in &cfg.learners {
            let model = match kind {
                LearnerKind::Logistic => LearnerModel::Logistic(Logistic::fit(x, y, cfg.logistic_iters, cfg.logistic_lr, cfg.l2)?),
                LearnerKind::DecisionStumpForest => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(task as u64);
                    LearnerModel::Forest(StumpForest::fit(x, y, cfg.n_stumps, &mut rng)?)
                }
            };
            let mut learner = BaseLearner { task_id: task, kind, model, val_accuracy: 0.0 };
            let (vx, vy) = val.get(&task).map(|(a, b)| (a.as_slice(), b.as_slice())).unwrap_or((&[], &[]));
            let (ex, ey) = if vx.is_empty() { (x.as_slice(), y.as_slice()) } else { (vx, vy) };
            let correct = ex
                .iter()
                .zip(ey)
                .filter(|(r, l)| Label::from_bool(learner.prob(r) >= eval::DECISION_THRESHOLD) == **l)
                .count();
            learner.val_accuracy = correct as f64 / ex.len() as f64;
            learners.push(learner);
        }
        pools.push(TaskPool { task_id: task, learners });
    }
    Ok(pools)
}

/// Most votes wins; a tie goes to AD.
pub fn majority_vote(votes: &[Label]) -> Label {
    let ad = votes.iter().filter(|v| v.is_ad()).count();
    Label::from_bool(2 * ad >= votes.len())
}

/// Summed weights per class; a tie goes to AD. All-zero weights fall back
/// to the plain majority vote.
pub fn weighted_majority_vote(votes: &[(Label, f64)]) -> Label {
    let total: f64 = votes.iter().map(|v| v.1).sum();
    if total <= 0.0 {
        log::warn!("all vote weights are zero; using unweighted majority");
        return majority_vote(&votes.iter().map(|v| v.0).collect::<Vec<_>>());
    }
    let ad: f64 = votes.iter().filter(|v| v.0.is_ad()).map(|v| v.1).sum();
    let hc: f64 = votes.iter().filter(|v| !v.0.is_ad()).map(|v| v.1).sum();
    Label::from_bool(ad >= hc)
}

/// Borda weights: the task with the best accuracy among R gets R, the worst
/// gets 1. Equal accuracies keep input order.
pub fn borda_weights(accuracies: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..accuracies.len()).collect();
    order.sort_by(|&a, &b| accuracies[b].total_cmp(&accuracies[a]).then(a.cmp(&b)));
    let r = accuracies.len();
    let mut w = vec![0.0; r];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = (r - rank) as f64;
    }
    w
}

/// Borda-weighted mean of per-task mean probabilities, thresholded at 0.5.
pub fn ranking_aggregate(task_probs: &[f64], accuracies: &[f64]) -> Label {
    assert_eq!(task_probs.len(), accuracies.len());
    assert!(!task_probs.is_empty(), "ranking needs at least one task");
    let w = borda_weights(accuracies);
    let p = w.iter().zip(task_probs).map(|(w, p)| w * p).sum::<f64>() / w.iter().sum::<f64>();
    Label::from_bool(p >= eval::DECISION_THRESHOLD)
}

/// Logistic model over per-task mean probabilities (0.5 where a task is
/// missing).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    pub tasks: Vec<usize>,
    pub model: Option<Logistic>,
}

impl MetaLearner {
    pub fn features(&self, task_probs: &BTreeMap<usize, f64>) -> Vec<f64> {
        self.tasks.iter().map(|t| *task_probs.get(t).unwrap_or(&0.5)).collect()
    }

    pub fn fit(tasks: Vec<usize>, subjects: &[(BTreeMap<usize, f64>, Label)], cfg: &EnsembleConfig) -> Result<Self> {
        let mut m = MetaLearner { tasks, model: None };
        let x: Vec<Vec<f64>> = subjects.iter().map(|(p, _)| m.features(p)).collect();
        let y: Vec<Label> = subjects.iter().map(|s| s.1).collect();
        m.model = Some(Logistic::fit(&x, &y, cfg.logistic_iters, cfg.logistic_lr, cfg.l2)?);
        Ok(m)
    }
}

pub fn stacking_aggregate(task_probs: &BTreeMap<usize, f64>, meta: &MetaLearner) -> Result<Label> {
    let model = meta.model.as_ref().ok_or(Error::UntrainedMeta)?;
    let p = model.prob(&meta.features(task_probs));
    Ok(Label::from_bool(p >= eval::DECISION_THRESHOLD))
}

/// Everything the pools say about one subject.
#[derive(Debug, Clone, Default)]
pub struct SubjectEvidence {
    /// (vote, learner validation accuracy) for every (stroke, learner) pair.
    pub votes: Vec<(Label, f64)>,
    /// Mean probability over the task's strokes and learners.
    pub task_probs: BTreeMap<usize, f64>,
}

pub fn subject_evidence(pools: &[TaskPool], tables: &[&TaskFeatures]) -> SubjectEvidence {
    let mut ev = SubjectEvidence::default();
    for t in tables {
        let Some(pool) = pools.iter().find(|p| p.task_id == t.task_id) else { continue };
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in &t.rows {
            for l in &pool.learners {
                let p = l.prob(row);
                ev.votes.push((Label::from_bool(p >= eval::DECISION_THRESHOLD), l.val_accuracy));
                sum += p;
                count += 1;
            }
        }
        if count > 0 {
            ev.task_probs.insert(t.task_id, sum / count as f64);
        }
    }
    ev
}

pub fn decide(strategy: Strategy, ev: &SubjectEvidence, pools: &[TaskPool], meta: &MetaLearner) -> Result<Label> {
    Ok(match strategy {
        Strategy::Mv => majority_vote(&ev.votes.iter().map(|v| v.0).collect::<Vec<_>>()),
        Strategy::Wmv => weighted_majority_vote(&ev.votes),
        Strategy::Ranking => {
            let (probs, accs): (Vec<f64>, Vec<f64>) = pools
                .iter()
                .filter_map(|p| ev.task_probs.get(&p.task_id).map(|q| (*q, p.mean_val_accuracy())))
                .unzip();
            if probs.is_empty() {
                Label::Ad
            } else {
                ranking_aggregate(&probs, &accs)
            }
        }
        Strategy::Stacking => stacking_aggregate(&ev.task_probs, meta)?,
    })
}

/// Per-fold state shared by all four strategies.
pub struct FoldEnsemble {
    pub pools: Vec<TaskPool>,
    pub meta: MetaLearner,
    /// (subject, truth, evidence) for every test subject.
    pub test: Vec<(String, Label, SubjectEvidence)>,
}

pub fn fit_fold(data: &Dataset, fold: &FoldAssignment, cfg: &EnsembleConfig, seed: u64) -> Result<FoldEnsemble> {
    let train_ids: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let scaler = robust_fit(&data.rows_of(&train_ids))?;
    let mut scaled: BTreeMap<&str, Vec<TaskFeatures>> = BTreeMap::new();
    for t in &data.features {
        let rows = if t.rows.is_empty() { Vec::new() } else { robust_transform(&t.rows, &scaler)? };
        scaled
            .entry(t.subject_id.as_str())
            .or_default()
            .push(TaskFeatures { subject_id: t.subject_id.clone(), task_id: t.task_id, rows });
    }
    let label_of = |id: &str| data.subject(id).map(|s| s.label).expect("known subject");
    let tables_of = |ids: &[String]| -> Vec<(&TaskFeatures, Label)> {
        ids.iter()
            .flat_map(|id| scaled.get(id.as_str()).into_iter().flatten().map(move |t| (t, label_of(id))))
            .collect()
    };
    let train = group_by_task(tables_of(&fold.train));
    let val = group_by_task(tables_of(&fold.val));
    let pools = train_base_learners(&train, &val, cfg, seed)?;
    if pools.is_empty() {
        return Err(Error::EmptyFit);
    }
    let evidence = |id: &String| {
        let tables: Vec<&TaskFeatures> = scaled.get(id.as_str()).into_iter().flatten().collect();
        subject_evidence(&pools, &tables)
    };
    let meta_rows: Vec<(BTreeMap<usize, f64>, Label)> =
        fold.train.iter().map(|id| (evidence(id).task_probs, label_of(id))).collect();
    let meta = MetaLearner::fit(pools.iter().map(|p| p.task_id).collect(), &meta_rows, cfg)?;
    let test = fold.test.iter().map(|id| (id.clone(), label_of(id), evidence(id))).collect();
    Ok(FoldEnsemble { pools, meta, test })
}

/// Cross-validates all four strategies on the given folds with one shared
/// set of base-learner pools per fold. Returns one results file per
/// strategy, in [`Strategy::ALL`] order.
pub fn cross_validate_ensembles(
    data: &Dataset,
    cfg: &EnsembleConfig,
    assignments: &[FoldAssignment],
    seed_base: u64,
    jobs: usize,
) -> Result<Vec<ResultsFile>> {
    let fits = parallel_map(assignments.len(), jobs, |k| fit_fold(data, &assignments[k], cfg, fold_seed(seed_base, k)));
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let mut per_fold = Vec::new();
        for (k, fit) in fits.iter().enumerate() {
            let mut ys = Vec::new();
            let mut ds = Vec::new();
            let mut stroke = Confusion::default();
            for (_, y, ev) in &fit.test {
                ys.push(*y);
                ds.push(decide(strategy, ev, &fit.pools, &fit.meta)?);
                let votes: Vec<Label> = ev.votes.iter().map(|v| v.0).collect();
                let c = Confusion::from_pairs(&votes, &vec![*y; votes.len()]);
                stroke.tp += c.tp;
                stroke.fn_ += c.fn_;
                stroke.tn += c.tn;
                stroke.fp += c.fp;
            }
            per_fold.push(FoldResult {
                fold: k,
                seed: fold_seed(seed_base, k),
                n_test_subjects: ys.len(),
                metrics: eval::confusion_metrics(&ds, &ys),
                window: Some(eval::metrics_from_confusion(&stroke)),
            });
        }
        out.push(ResultsFile::new(strategy.name(), "ensemble", None, None, seed_base, per_fold)?);
    }
    Ok(out)
}
