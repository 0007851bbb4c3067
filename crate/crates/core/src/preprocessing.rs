//! Global robust scaling and sliding-window sequence construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, WindowBatch};

/// IQRs below this are replaced by 1 (constant-feature guard).
pub const IQR_GUARD: f64 = 1e-12;
/// Window columns with a standard deviation below this are zeroed.
pub const STD_GUARD: f64 = 1e-12;

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaleParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

impl RobustScaleParams {
    pub fn dim(&self) -> usize {
        self.median.len()
    }
}

/// Per-column median and IQR of the training rows.
pub fn robust_fit(rows: &[Vec<f64>]) -> Result<RobustScaleParams> {
    let first = rows.first().ok_or(Error::EmptyFit)?;
    let dim = first.len();
    let mut median = Vec::with_capacity(dim);
    let mut iqr = Vec::with_capacity(dim);
    let mut col = Vec::with_capacity(rows.len());
    for c in 0..dim {
        col.clear();
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            col.push(r[c]);
        }
        col.sort_by(f64::total_cmp);
        median.push(quantile_sorted(&col, 0.5));
        let spread = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        iqr.push(if spread < IQR_GUARD { 1.0 } else { spread });
    }
    Ok(RobustScaleParams { median, iqr })
}

pub fn robust_transform_row(row: &[f64], params: &RobustScaleParams) -> Result<Vec<f64>> {
    if row.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: row.len(),
        });
    }
    Ok(row
        .iter()
        .zip(params.median.iter().zip(&params.iqr))
        .map(|(x, (m, q))| (x - m) / q)
        .collect())
}

/// `(x - median) / IQR` per column.
pub fn robust_transform(rows: &[Vec<f64>], params: &RobustScaleParams) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| robust_transform_row(r, params)).collect()
}

/// Number of windows `make_windows` yields for a sequence of length `len`.
pub fn window_count(len: usize, ws: usize, stride: usize) -> usize {
    if len < ws {
        1
    } else {
        (len - ws) / stride + 1
    }
}

/// Labels carried by every window of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeta {
    pub task_id: usize,
    pub statics: [f64; 4],
    pub subject_id: String,
    pub label: Label,
}

/// Sliding windows over a task's stroke rows. Windows start at multiples of
/// `stride` while they fit; a sequence shorter than `ws` gives one window
/// left-padded by repeating its first row.
pub fn make_windows(seq: &[Vec<f64>], ws: usize, stride: usize, meta: &WindowMeta) -> Vec<WindowBatch> {
    assert!(ws >= 1 && stride >= 1, "window size and stride must be positive");
    if seq.is_empty() {
        return Vec::new();
    }
    let cols = seq[0].len();
    let build = |rows: &mut dyn Iterator<Item = &Vec<f64>>| {
        let mut window = Vec::with_capacity(ws * cols);
        for r in rows {
            window.extend_from_slice(r);
        }
        WindowBatch {
            window,
            rows: ws,
            cols,
            task_id: meta.task_id,
            statics: meta.statics,
            subject_id: meta.subject_id.clone(),
            label: meta.label,
        }
    };
    if seq.len() < ws {
        let pad = ws - seq.len();
        let mut rows = std::iter::repeat(&seq[0]).take(pad).chain(seq.iter());
        return vec![build(&mut rows)];
    }
    (0..window_count(seq.len(), ws, stride))
        .map(|k| build(&mut seq[k * stride..k * stride + ws].iter()))
        .collect()
}

/// Standardizes each column of the window to zero mean and unit population
/// standard deviation; near-constant columns become zero.
pub fn window_standardize(w: &WindowBatch) -> WindowBatch {
    let mut out = w.clone();
    window_standardize_in_place(&mut out);
    out
}

pub fn window_standardize_in_place(w: &mut WindowBatch) {
    let (rows, cols) = (w.rows, w.cols);
    if rows == 0 {
        return;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| w.window[r * cols + c]).sum::<f64>() / rows as f64;
        let var = (0..rows)
            .map(|r| {
                let d = w.window[r * cols + c] - mean;
                d * d
            })
            .sum::<f64>()
            / rows as f64;
        let std = var.sqrt();
        for r in 0..rows {
            let v = &mut w.window[r * cols + c];
            *v = if std < STD_GUARD { 0.0 } else { (*v - mean) / std };
        }
    }
}
