//! Temporal Stability Score: `TSS(s, w) = D_s(w) + A(w) - R(s) + E(w)`,
//! scanned over a (stride, window) grid.
//!
//! Estimators:
//! - `D_s`: `1 / (1 + CV)` of per-recording window counts at stride 1.
//! - `A`: first lag where the recording-averaged biased ACF of the per-stroke
//!   mean-speed sequence drops below 0.2, as `min(lag, w) / w`.
//! - `R`: normalized mutual information (arithmetic-mean normalization,
//!   16 equal-width bins) between consecutive windows, averaged over pairs.
//!   Consecutive windows are aligned on their shared strokes; the rows that
//!   are not shared are paired cyclically.
//! - `E`: Shannon entropy of the 16-bin histogram of each z-scored window,
//!   divided by `ln 16`, averaged over windows.

use log::warn;
use serde::Serialize;

use crate::kinematics::idx;
use crate::model::TaskFeatures;
use crate::preprocessing::window_count;

pub const BINS: usize = 16;
pub const ACF_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TssComponents {
    pub stride: usize,
    pub window: usize,
    pub d_s: f64,
    pub a: f64,
    pub r: f64,
    pub e: f64,
    pub tss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TssSurface {
    /// Cells in stride-major order.
    pub cells: Vec<TssComponents>,
    pub argmax: usize,
}

impl TssSurface {
    pub fn best(&self) -> &TssComponents {
        &self.cells[self.argmax]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stride,window,d_s,a,r,e,tss\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.stride, c.window, c.d_s, c.a, c.r, c.e, c.tss
            ));
        }
        s
    }
}

/// `1 / (1 + CV)` of window counts at stride 1 over recordings of the
/// given lengths.
pub fn stroke_count_stability(lengths: &[usize], w: usize) -> f64 {
    let counts: Vec<f64> = lengths.iter().map(|&l| window_count(l, w, 1) as f64).collect();
    stability_of_counts(&counts)
}

pub fn stability_of_counts(counts: &[f64]) -> f64 {
    if counts.len() < 2 {
        return 1.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    1.0 / (1.0 + cv)
}

/// Biased autocorrelation estimates for lags `1..=max_lag` (index `k - 1`).
/// Returns `None` for a constant signal. Lags at or beyond the signal length
/// are reported as 0.
pub fn acf(signal: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = signal.len();
    if n == 0 {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let denom: f64 = signal.iter().map(|x| (x - mean) * (x - mean)).sum();
    if denom <= 0.0 {
        return None;
    }
    Some(
        (1..=max_lag)
            .map(|k| {
                if k >= n {
                    return 0.0;
                }
                (0..n - k)
                    .map(|i| (signal[i] - mean) * (signal[i + k] - mean))
                    .sum::<f64>()
                    / denom
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Persistence {
    pub lag: usize,
    pub a: f64,
    /// Set when the autocorrelation was undefined (constant signal).
    pub undefined: bool,
}

fn persistence_from_acf(curve: &[f64], threshold: f64, max_lag: usize, w: usize) -> Persistence {
    let lag = curve
        .iter()
        .position(|&r| r < threshold)
        .map(|i| i + 1)
        .unwrap_or(max_lag);
    Persistence {
        lag,
        a: lag.min(w) as f64 / w as f64,
        undefined: false,
    }
}

/// Smallest lag where the ACF drops below `threshold`, clamped to `max_lag`.
pub fn autocorr_persistence(signal: &[f64], threshold: f64, max_lag: usize, w: usize) -> Persistence {
    match acf(signal, max_lag) {
        Some(curve) => persistence_from_acf(&curve, threshold, max_lag, w),
        None => {
            warn!("autocorrelation undefined for a constant signal");
            Persistence {
                lag: 0,
                a: 0.0,
                undefined: true,
            }
        }
    }
}

/// Persistence of the per-stroke mean-speed sequence, with ACF curves
/// averaged over recordings (each lag over the recordings long enough to
/// have it).
pub fn dataset_persistence(dataset: &[TaskFeatures], w: usize) -> Persistence {
    let max_lag = w;
    let mut sum = vec![0.0; max_lag];
    let mut cnt = vec![0usize; max_lag];
    for rec in sorted(dataset) {
        let sig: Vec<f64> = rec.rows.iter().map(|r| r[idx::MEAN_SPEED]).collect();
        if let Some(curve) = acf(&sig, max_lag) {
            for k in 0..max_lag.min(sig.len().saturating_sub(1)) {
                sum[k] += curve[k];
                cnt[k] += 1;
            }
        }
    }
    if cnt[0] == 0 {
        warn!("autocorrelation undefined: no non-constant mean-speed sequence");
        return Persistence {
            lag: 0,
            a: 0.0,
            undefined: true,
        };
    }
    let curve: Vec<f64> = sum
        .iter()
        .zip(&cnt)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    persistence_from_acf(&curve, ACF_THRESHOLD, max_lag, w)
}

fn bin_index(v: f64, lo: f64, width: f64) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((v - lo) / width) as usize).min(BINS - 1)
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI between paired samples with a shared 16-bin equal-width binning.
pub fn normalized_mutual_information(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / BINS as f64;
    let mut ca = [0usize; BINS];
    let mut cb = [0usize; BINS];
    let mut joint = vec![0usize; BINS * BINS];
    for (x, y) in a.iter().zip(b) {
        let i = bin_index(*x, lo, width);
        let j = bin_index(*y, lo, width);
        ca[i] += 1;
        cb[j] += 1;
        joint[i * BINS + j] += 1;
    }
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    if ha + hb <= 0.0 {
        return 0.0;
    }
    let hab = entropy(&joint, n);
    let mi = (ha + hb - hab).max(0.0);
    (mi / (0.5 * (ha + hb))).clamp(0.0, 1.0)
}

/// Flattened value pairs of two consecutive windows `stride` rows apart:
/// row `r` of the first is paired with row `(r - stride) mod w` of the second.
pub fn aligned_pairs(rows: &[Vec<f64>], start: usize, w: usize, stride: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let shift = stride % w;
    for r in 0..w {
        let ra = &rows[start + r];
        let rb = &rows[start + stride + (r + w - shift) % w];
        a.extend_from_slice(ra);
        b.extend_from_slice(rb);
    }
    (a, b)
}

pub fn stride_redundancy(dataset: &[TaskFeatures], w: usize, s: usize) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for rec in sorted(dataset) {
        let len = rec.rows.len();
        if len < w {
            continue;
        }
        let count = window_count(len, w, s);
        for k in 0..count.saturating_sub(1) {
            let (a, b) = aligned_pairs(&rec.rows, k * s, w, s);
            total += normalized_mutual_information(&a, &b);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Normalized entropy of one window's z-scored values; 0 for constant windows.
pub fn window_value_entropy(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if sd < 1e-12 {
        return 0.0;
    }
    let z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / BINS as f64;
    let mut counts = [0usize; BINS];
    for v in &z {
        counts[bin_index(*v, lo, width)] += 1;
    }
    entropy(&counts, n) / (BINS as f64).ln()
}

/// Mean normalized entropy over all stride-1 windows (short recordings
/// contribute one padded window).
pub fn window_entropy(dataset: &[TaskFeatures], w: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut buf = Vec::new();
    for rec in sorted(dataset) {
        let len = rec.rows.len();
        if len == 0 {
            continue;
        }
        for k in 0..window_count(len, w, 1) {
            buf.clear();
            if len < w {
                for _ in 0..w - len {
                    buf.extend_from_slice(&rec.rows[0]);
                }
                for r in &rec.rows {
                    buf.extend_from_slice(r);
                }
            } else {
                for r in &rec.rows[k..k + w] {
                    buf.extend_from_slice(r);
                }
            }
            total += window_value_entropy(&buf);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn sorted(dataset: &[TaskFeatures]) -> Vec<&TaskFeatures> {
    let mut v: Vec<&TaskFeatures> = dataset.iter().collect();
    v.sort_by(|a, b| (&a.subject_id, a.task_id).cmp(&(&b.subject_id, b.task_id)));
    v
}

pub fn tss_cell(dataset: &[TaskFeatures], w: usize, s: usize) -> TssComponents {
    let lengths: Vec<usize> = sorted(dataset).iter().map(|r| r.rows.len()).collect();
    let d_s = stroke_count_stability(&lengths, w);
    let a = dataset_persistence(dataset, w).a;
    let r = stride_redundancy(dataset, w, s);
    let e = window_entropy(dataset, w);
    TssComponents {
        stride: s,
        window: w,
        d_s,
        a,
        r,
        e,
        tss: d_s + a - r + e,
    }
}

/// One cell per (stride, window), stride-major, plus the first maximizing cell.
pub fn tss_grid_scan(dataset: &[TaskFeatures], w_grid: &[usize], s_grid: &[usize]) -> TssSurface {
    assert!(!w_grid.is_empty() && !s_grid.is_empty(), "grids must be non-empty");
    let mut cells = Vec::with_capacity(w_grid.len() * s_grid.len());
    for &s in s_grid {
        for &w in w_grid {
            cells.push(tss_cell(dataset, w, s));
        }
    }
    let mut argmax = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.tss > cells[argmax].tss {
            argmax = i;
        }
    }
    TssSurface { cells, argmax }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stability_examples() {
        assert_eq!(stability_of_counts(&[4.0, 4.0, 4.0]), 1.0);
        assert!((stability_of_counts(&[1.0, 3.0]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(stability_of_counts(&[5.0]), 1.0);
        // lengths 60 and 62 at w=60 give counts 1 and 3
        assert!((stroke_count_stability(&[60, 62], 60) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn persistence_clamps_and_flags() {
        let p = autocorr_persistence(&[1.0; 50], 0.2, 10, 60);
        assert!(p.undefined);
        assert_eq!(p.a, 0.0);
        // slow ramp never decorrelates within 3 lags
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let p = autocorr_persistence(&ramp, 0.2, 3, 60);
        assert_eq!(p.lag, 3);
        assert!((p.a - 3.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn nmi_bounds() {
        let a: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!((normalized_mutual_information(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(normalized_mutual_information(&[1.0; 10], &[1.0; 10]), 0.0);
    }

    #[test]
    fn entropy_of_constant_window_is_zero() {
        assert_eq!(window_value_entropy(&[3.0; 40]), 0.0);
    }

    #[test]
    fn aligned_pairs_share_rows() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let (a, b) = aligned_pairs(&rows, 0, 4, 1);
        assert_eq!(a, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b, vec![4.0, 1.0, 2.0, 3.0]);
    }
}
