//! Class-weighted BCE, AdamW with decoupled decay, global-norm clipping,
//! plateau learning-rate schedule and F1-based early stopping.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::Label;

pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-5;
pub const MIN_LR: f64 = 1e-6;
pub const MAX_GRAD_NORM: f64 = 1.0;

/// Inverse-frequency weights `w_c = N / (2 N_c)`, returned as `(w_HC, w_AD)`.
pub fn class_weights(labels: &[Label]) -> Result<(f64, f64)> {
    let ad = labels.iter().filter(|l| l.is_ad()).count();
    let hc = labels.len() - ad;
    if ad == 0 || hc == 0 {
        return Err(Error::SingleClass { hc, ad });
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * hc as f64), n / (2.0 * ad as f64)))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Batch mean of `−w_y [y ln p + (1−y) ln(1−p)]`, probabilities clamped.
/// `weights` is `(w_HC, w_AD)`.
pub fn weighted_bce(probs: &[f64], labels: &[Label], weights: (f64, f64)) -> f64 {
    assert_eq!(probs.len(), labels.len());
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            match y {
                Label::Ad => -weights.1 * p.ln(),
                Label::Hc => -weights.0 * (1.0 - p).ln(),
            }
        })
        .sum();
    total / probs.len() as f64
}

/// dLoss/dlogit of one example's term in [`weighted_bce`] for a batch of
/// size `n`. Equals `w_y (p − y) / n` wherever the clamp is inactive; inside
/// the clamp region the loss is flat and the gradient is zero.
pub fn weighted_bce_dlogit(prob: f64, label: Label, weights: (f64, f64), n: usize) -> f64 {
    if prob < PROB_CLAMP || prob > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    let w = match label {
        Label::Ad => weights.1,
        Label::Hc => weights.0,
    };
    w * (prob - label.as_f64()) / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update, `θ ← θ − η (m̂ / (√v̂ + ε) + λ θ)`. `name_of` maps a
/// parameter index to a name for the error raised on non-finite gradients.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    name_of: impl Fn(usize) -> String,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: grads.len() });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name_of(k)));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, wd, eps) = (state.beta1, state.beta2, state.lr, state.weight_decay, state.eps);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[k]);
    }
    Ok(())
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self { best: None, bad_epochs: 0, patience: 5, factor: 0.5, min_lr: MIN_LR }
    }
}

impl PlateauScheduler {
    /// Records one validation F1 and returns the (possibly reduced) rate.
    /// The rate drops once the non-improving count exceeds the patience.
    pub fn step(&mut self, val_f1: f64, lr: f64) -> f64 {
        if self.best.map_or(true, |b| val_f1 > b) {
            self.best = Some(val_f1);
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub best: Option<f64>,
    pub counter: usize,
    pub patience: usize,
}

impl Default for EarlyStopping {
    /// Ten half-epoch validations, i.e. five epochs.
    fn default() -> Self {
        Self { best: None, counter: 0, patience: 10 }
    }
}

impl EarlyStopping {
    /// Returns whether this validation improved on the best, and the decision.
    pub fn update(&mut self, current_f1: f64) -> (bool, StopDecision) {
        let improved = self.best.map_or(true, |b| current_f1 > b);
        if improved {
            self.best = Some(current_f1);
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        let decision = if self.counter >= self.patience { StopDecision::Stop } else { StopDecision::Continue };
        (improved, decision)
    }
}

pub const TRAIN_LOG_HEADER: &str = "step,split,loss,f1,lr,grad_norm";

/// Append-only training log. Empty fields are written for values a split
/// does not have (no F1 on training batches, no gradient norm on validation).
pub struct TrainLog<W: Write> {
    out: W,
}

impl<W: Write> TrainLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{TRAIN_LOG_HEADER}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, step: u64, split: &str, loss: f64, f1: Option<f64>, lr: f64, grad_norm: Option<f64>) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(self.out, "{step},{split},{loss:.6},{},{lr:e},{}", opt(f1), opt(grad_norm))?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Ad, Hc};

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[Ad, Hc, Ad, Hc]).unwrap(), (1.0, 1.0));
        let mut labels = vec![Ad; 89];
        labels.extend(vec![Hc; 85]);
        let (hc, ad) = class_weights(&labels).unwrap();
        assert!((hc - 1.02353).abs() < 1e-5 && (ad - 0.97753).abs() < 1e-5);
        let mut labels = vec![Hc; 90];
        labels.extend(vec![Ad; 10]);
        let (hc, ad) = class_weights(&labels).unwrap();
        assert!((hc - 100.0 / 180.0).abs() < 1e-12 && (ad - 5.0).abs() < 1e-12);
        assert!(matches!(class_weights(&[Ad, Ad]), Err(Error::SingleClass { hc: 0, ad: 2 })));
    }

    #[test]
    fn bce_examples() {
        assert!(weighted_bce(&[1.0, 0.0], &[Ad, Hc], (3.0, 2.0)) <= 1e-6);
        assert!((weighted_bce(&[0.5], &[Ad], (1.0, 1.0)) - std::f64::consts::LN_2).abs() < 1e-12);
        let v = weighted_bce(&[0.8, 0.3], &[Ad, Hc], (1.0, 1.0));
        assert!((v - (-(0.8f64.ln()) - 0.7f64.ln()) / 2.0).abs() < 1e-12);
        assert!((v - 0.289909).abs() < 1e-6);
    }

    #[test]
    fn bce_gradient_matches_difference_quotient() {
        let w = (0.8, 1.3);
        for (z, y) in [(0.3, Ad), (-1.2, Hc), (2.0, Hc)] {
            let p = |z: f64| 1.0 / (1.0 + (-z as f64).exp());
            let h = 1e-6;
            let num = (weighted_bce(&[p(z + h)], &[y], w) - weighted_bce(&[p(z - h)], &[y], w)) / (2.0 * h);
            assert!((num - weighted_bce_dlogit(p(z), y, w, 1)).abs() < 1e-8);
        }
    }

    #[test]
    fn adamw_first_step_and_decay() {
        let mut st = OptimState::new(3);
        let mut th = vec![0.0; 3];
        let g = [0.5, -2.0, 1e-3];
        adamw_step(&mut th, &g, &mut st, |k| k.to_string()).unwrap();
        for (t, g) in th.iter().zip(g) {
            let want = -DEFAULT_LR * g / (g.abs() + 1e-8);
            assert!((t - want).abs() < 1e-15);
        }
        let mut st = OptimState::new(2);
        let mut th = vec![2.0, -1.0];
        adamw_step(&mut th, &[0.0, 0.0], &mut st, |k| k.to_string()).unwrap();
        assert_eq!(th, vec![2.0 - DEFAULT_LR * DEFAULT_WEIGHT_DECAY * 2.0, -1.0 + DEFAULT_LR * DEFAULT_WEIGHT_DECAY]);
    }

    #[test]
    fn adamw_rejects_nan_with_name() {
        let mut st = OptimState::new(2);
        let err = adamw_step(&mut [0.0, 0.0], &[0.0, f64::NAN], &mut st, |k| format!("p{k}")).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "p1"));
    }

    #[test]
    fn clipping() {
        let mut g = vec![0.3, 0.4];
        clip_gradients(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![1.2, 1.6];
        assert_eq!(clip_gradients(&mut g, 1.0), 2.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plateau_schedule() {
        let mut s = PlateauScheduler::default();
        let mut lr = s.step(0.5, 1e-4);
        for k in 0..6 {
            lr = s.step(0.5, lr);
            if k < 5 {
                assert_eq!(lr, 1e-4);
            }
        }
        assert_eq!(lr, 5e-5);

        let mut s = PlateauScheduler::default();
        let mut lr = s.step(0.5, 1e-4);
        for _ in 0..4 {
            lr = s.step(0.4, lr);
        }
        lr = s.step(0.6, lr);
        for _ in 0..5 {
            lr = s.step(0.6, lr);
        }
        assert_eq!(lr, 1e-4);

        let mut s = PlateauScheduler::default();
        let mut lr = 1e-4;
        for _ in 0..500 {
            lr = s.step(0.1, lr);
            assert!(lr >= MIN_LR);
        }
        assert_eq!(lr, MIN_LR);
    }

    #[test]
    fn early_stopping() {
        let mut es = EarlyStopping::default();
        for k in 0..50 {
            assert_eq!(es.update(k as f64 / 50.0).1, StopDecision::Continue);
        }
        let mut es = EarlyStopping::default();
        es.update(0.5);
        let decisions: Vec<_> = (0..10).map(|_| es.update(0.5).1).collect();
        assert!(decisions[..9].iter().all(|d| *d == StopDecision::Continue));
        assert_eq!(decisions[9], StopDecision::Stop);

        let mut es = EarlyStopping::default();
        es.update(0.5);
        for _ in 0..8 {
            es.update(0.5);
        }
        assert_eq!(es.update(0.7), (true, StopDecision::Continue));
        assert_eq!(es.counter, 0);
    }

    #[test]
    fn log_format() {
        let mut log = TrainLog::new(Vec::new()).unwrap();
        log.record(3, "train", 0.5, None, 1e-4, Some(0.25)).unwrap();
        log.record(3, "val", 0.4, Some(0.75), 1e-4, None).unwrap();
        let s = String::from_utf8(log.into_inner()).unwrap();
        assert_eq!(s, "step,split,loss,f1,lr,grad_norm\n3,train,0.500000,,1e-4,0.250000\n3,val,0.400000,0.750000,1e-4,\n");
    }
}
