//! Naive, independently written reference implementations used to check the
//! library. Nothing here calls into `strokeseq` beyond its plain data types.
#![allow(dead_code)]

use std::f64::consts::PI;

use strokeseq::model::{PenSample, TaskFeatures, TaskRecording};
use strokeseq::neural::ModelParams;

// ---------------------------------------------------------------------------
// stroke features

fn d_dt(v: &[f64], t: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| match i {
            0 => (v[1] - v[0]) / (t[1] - t[0]),
            _ if i == n - 1 => (v[i] - v[i - 1]) / (t[i] - t[i - 1]),
            _ => (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]),
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn angle_wrap(a: f64) -> f64 {
    let mut r = a;
    while r > PI {
        r -= 2.0 * PI;
    }
    while r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Spread of the points around the orthogonal-regression line. The line's
/// angle comes from the closed form `0.5 atan2(2 Sxy, Sxx - Syy)`.
pub fn tls_spread(pts: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (c, s) = (theta.cos(), theta.sin());
    let dist: Vec<f64> = pts.iter().map(|(x, y)| ((x - mx) * s - (y - my) * c).abs()).collect();
    pop_std(&dist)
}

/// Polygon area by the trapezoid formula, relative to the first vertex.
fn polygon_area(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let (ox, oy) = pts[0];
    let n = pts.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (x0, y0) = (pts[i].0 - ox, pts[i].1 - oy);
        let (x1, y1) = (pts[(i + 1) % n].0 - ox, pts[(i + 1) % n].1 - oy);
        twice += (x1 - x0) * (y1 + y0);
    }
    (twice / 2.0).abs()
}

fn prominence_of_peak(a: &[f64], i: usize) -> f64 {
    let left_stop = (0..i).rev().find(|&j| a[j] > a[i]).map(|j| j + 1).unwrap_or(0);
    let right_stop = (i + 1..a.len()).find(|&j| a[j] > a[i]).unwrap_or(a.len());
    let left_min = a[left_stop..=i].iter().cloned().fold(f64::INFINITY, f64::min);
    let right_min = a[i..right_stop].iter().cloned().fold(f64::INFINITY, f64::min);
    a[i] - left_min.max(right_min)
}

fn strict_peaks(a: &[f64], thr: f64) -> usize {
    (1..a.len().saturating_sub(1))
        .filter(|&i| a[i] > a[i - 1] && a[i] > a[i + 1])
        .filter(|&i| prominence_of_peak(a, i) >= thr)
        .count()
}

pub fn prominent_extrema(a: &[f64], thr: f64) -> usize {
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    strict_peaks(a, thr) + strict_peaks(&neg, thr)
}

fn trapezoid(f: &[f64], t: &[f64]) -> f64 {
    (1..t.len()).map(|i| (t[i] - t[i - 1]) * (f[i] + f[i - 1]) / 2.0).sum()
}

/// The 27 features of one stroke; the two task-mean jerk entries are filled
/// by [`task_features`].
pub fn stroke_features(s: &[PenSample], prev: Option<&[PenSample]>, rec_start: f64, n_strokes: usize, index: usize) -> [f64; 27] {
    let n = s.len();
    let t: Vec<f64> = s.iter().map(|p| p.t).collect();
    let x: Vec<f64> = s.iter().map(|p| p.x).collect();
    let y: Vec<f64> = s.iter().map(|p| p.y).collect();
    let vx = d_dt(&x, &t);
    let vy = d_dt(&y, &t);
    let ax = d_dt(&vx, &t);
    let ay = d_dt(&vy, &t);
    let jx = d_dt(&ax, &t);
    let jy = d_dt(&ay, &t);
    let speed: Vec<f64> = (0..n).map(|i| (vx[i] * vx[i] + vy[i] * vy[i]).sqrt()).collect();
    let accel: Vec<f64> = (0..n).map(|i| (ax[i] * ax[i] + ay[i] * ay[i]).sqrt()).collect();

    let dur = t[n - 1] - t[0];
    let w = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
    let h = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
    let diag = (w * w + h * h).sqrt();
    let chord = ((x[n - 1] - x[0]).powi(2) + (y[n - 1] - y[0]).powi(2)).sqrt();
    let denom = if chord < 1e-9 { diag } else { chord };
    let arc: f64 = (1..n).map(|i| ((x[i] - x[i - 1]).powi(2) + (y[i] - y[i - 1]).powi(2)).sqrt()).sum();
    let pts: Vec<(f64, f64)> = s.iter().map(|p| (p.x, p.y)).collect();

    let slant = angle_wrap((y[n - 1] - y[0]).atan2(x[n - 1] - x[0]));
    let m = n.min(16) - 1;
    let init = (y[m] - y[0]).atan2(x[m] - x[0]);

    let loop_area = match prev {
        None => 0.0,
        Some(p) => {
            let mut poly: Vec<(f64, f64)> = p.iter().map(|q| (q.x, q.y)).collect();
            poly.extend(pts.iter().copied());
            polygon_area(&poly)
        }
    };
    let vmax = speed.iter().cloned().fold(f64::MIN, f64::max);
    let peak_at = speed.iter().position(|&v| v == vmax).unwrap();
    let air: f64 = (0..n - 1).filter(|&i| !s[i].on_paper).map(|i| t[i + 1] - t[i]).sum();

    let jy2: Vec<f64> = jy.iter().map(|v| v * v).collect();
    let j2: Vec<f64> = (0..n).map(|i| jx[i] * jx[i] + jy[i] * jy[i]).collect();
    let nj = |sq: &[f64]| (trapezoid(sq, &t) / 2.0 * dur.powi(5) / (arc * arc)).sqrt();
    let press: Vec<f64> = s.iter().filter(|p| p.on_paper).map(|p| p.pressure).collect();

    [
        index as f64,
        t[0] - rec_start,
        dur,
        y[0],
        h,
        vy.iter().map(|v| v.abs()).fold(0.0, f64::max),
        ay.iter().map(|v| v.abs()).fold(0.0, f64::max),
        x[0],
        w,
        tls_spread(&pts) / denom,
        slant,
        loop_area,
        angle_wrap(init - slant),
        (t[peak_at] - t[0]) / dur,
        (air / dur).clamp(0.0, 1.0),
        diag,
        mean(&speed),
        arc / denom,
        mean(&jy2).sqrt(),
        nj(&jy2),
        0.0,
        mean(&j2).sqrt(),
        nj(&j2),
        0.0,
        prominent_extrema(&accel, 0.05 * pop_std(&accel)) as f64,
        if press.is_empty() { 0.0 } else { mean(&press) },
        n_strokes as f64,
    ]
}

pub fn task_features(rec: &TaskRecording) -> Vec<[f64; 27]> {
    let start = rec.strokes[0].samples[0].t;
    let k = rec.strokes.len();
    let mut rows: Vec<[f64; 27]> = (0..k)
        .map(|i| {
            let prev = if i == 0 { None } else { Some(rec.strokes[i - 1].samples.as_slice()) };
            stroke_features(&rec.strokes[i].samples, prev, start, k, rec.strokes[i].index)
        })
        .collect();
    let avg_y = rows.iter().map(|r| r[19]).sum::<f64>() / k as f64;
    let avg = rows.iter().map(|r| r[22]).sum::<f64>() / k as f64;
    for r in &mut rows {
        r[20] = avg_y;
        r[23] = avg;
    }
    rows
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// temporal stability score

const NB: usize = 16;
const MEAN_SPEED_COL: usize = 16;

fn n_windows(len: usize, w: usize, s: usize) -> usize {
    if len < w {
        1
    } else {
        (len - w) / s + 1
    }
}

fn bin(v: f64, lo: f64, width: f64) -> usize {
    if width > 0.0 {
        (((v - lo) / width) as usize).min(NB - 1)
    } else {
        0
    }
}

/// Mutual information computed directly from the joint table, normalized by
/// the mean of the marginal entropies.
pub fn nmi(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / NB as f64;
    let mut joint = [[0.0f64; NB]; NB];
    for (p, q) in a.iter().zip(b) {
        joint[bin(*p, lo, width)][bin(*q, lo, width)] += 1.0 / n;
    }
    let pa: Vec<f64> = (0..NB).map(|i| joint[i].iter().sum()).collect();
    let pb: Vec<f64> = (0..NB).map(|j| (0..NB).map(|i| joint[i][j]).sum()).collect();
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
    let (ha, hb) = (h(&pa), h(&pb));
    if ha + hb <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for i in 0..NB {
        for j in 0..NB {
            if joint[i][j] > 0.0 {
                mi += joint[i][j] * (joint[i][j] / (pa[i] * pb[j])).ln();
            }
        }
    }
    (mi.max(0.0) / ((ha + hb) / 2.0)).min(1.0)
}

fn window_entropy_of(vals: &[f64]) -> f64 {
    let sd = pop_std(vals);
    if sd < 1e-12 {
        return 0.0;
    }
    let m = mean(vals);
    let z: Vec<f64> = vals.iter().map(|v| (v - m) / sd).collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / NB as f64;
    let mut p = [0.0f64; NB];
    for v in &z {
        p[bin(*v, lo, width)] += 1.0 / z.len() as f64;
    }
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum::<f64>() / (NB as f64).ln()
}

/// `(D_s, A, R, E)` for one grid cell.
pub fn tss_components(data: &[TaskFeatures], w: usize, s: usize) -> (f64, f64, f64, f64) {
    let mut recs: Vec<&TaskFeatures> = data.iter().collect();
    recs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id).then(a.task_id.cmp(&b.task_id)));

    // D_s
    let counts: Vec<f64> = recs.iter().map(|r| n_windows(r.rows.len(), w, 1) as f64).collect();
    let d_s = if counts.len() < 2 {
        1.0
    } else {
        let m = mean(&counts);
        let cv = if m > 0.0 { pop_std(&counts) / m } else { 0.0 };
        1.0 / (1.0 + cv)
    };

    // A: per-lag average of the biased ACF over recordings that reach the lag
    let mut acc = vec![(0.0, 0usize); w + 1];
    for r in &recs {
        let sig: Vec<f64> = r.rows.iter().map(|row| row[MEAN_SPEED_COL]).collect();
        if sig.is_empty() {
            continue;
        }
        let m = mean(&sig);
        let c0: f64 = sig.iter().map(|v| (v - m).powi(2)).sum();
        if c0 <= 0.0 {
            continue;
        }
        for lag in 1..=w.min(sig.len() - 1) {
            let ck: f64 = (lag..sig.len()).map(|i| (sig[i] - m) * (sig[i - lag] - m)).sum();
            acc[lag].0 += ck / c0;
            acc[lag].1 += 1;
        }
    }
    let a = if acc[1].1 == 0 {
        0.0
    } else {
        let lag = (1..=w)
            .find(|&l| {
                let v = if acc[l].1 > 0 { acc[l].0 / acc[l].1 as f64 } else { 0.0 };
                v < 0.2
            })
            .unwrap_or(w);
        lag.min(w) as f64 / w as f64
    };

    // R: consecutive windows, each row matched with the same absolute stroke
    // where they overlap and wrapped around where they do not
    let (mut total, mut pairs) = (0.0, 0usize);
    for r in &recs {
        let len = r.rows.len();
        if len < w {
            continue;
        }
        let nw = n_windows(len, w, s);
        for k in 0..nw.saturating_sub(1) {
            let (mut xa, mut xb) = (Vec::new(), Vec::new());
            for i in 0..w {
                let partner = (k + 1) * s + (i as isize - s as isize).rem_euclid(w as isize) as usize;
                xa.extend_from_slice(&r.rows[k * s + i]);
                xb.extend_from_slice(&r.rows[partner]);
            }
            total += nmi(&xa, &xb);
            pairs += 1;
        }
    }
    let red = if pairs == 0 { 0.0 } else { total / pairs as f64 };

    // E over stride-1 windows, padding short recordings with their first row
    let (mut et, mut en) = (0.0, 0usize);
    for r in &recs {
        let len = r.rows.len();
        if len == 0 {
            continue;
        }
        let padded: Vec<&Vec<f64>> = if len < w {
            std::iter::repeat(&r.rows[0]).take(w - len).chain(r.rows.iter()).collect()
        } else {
            r.rows.iter().collect()
        };
        for k in 0..n_windows(len, w, 1) {
            let vals: Vec<f64> = padded[k..k + w].iter().flat_map(|row| row.iter().copied()).collect();
            et += window_entropy_of(&vals);
            en += 1;
        }
    }
    let e = if en == 0 { 0.0 } else { et / en as f64 };
    (d_s, a, red, e)
}

// ---------------------------------------------------------------------------
// recurrent cells, written with separate hidden and input blocks

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `W [h; x] (+ b)` then layer norm, for the named gate of direction `dir`.
fn preact(p: &ModelParams, dir: &str, gate: &str, h: &[f64], x: &[f64]) -> Vec<f64> {
    let w = p.slice(&format!("{dir}.W_{gate}")).unwrap();
    let (nh, nx) = (h.len(), x.len());
    let width = nh + nx;
    let mut out = vec![0.0; nh];
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * width..(j + 1) * width];
        let wh: f64 = (0..nh).map(|k| row[k] * h[k]).sum();
        let wx: f64 = (0..nx).map(|k| row[nh + k] * x[k]).sum();
        *o = wh + wx;
    }
    if let Some(b) = p.slice(&format!("{dir}.b_{gate}")) {
        for j in 0..nh {
            out[j] += b[j];
        }
    }
    if let (Some(g), Some(beta)) = (p.slice(&format!("{dir}.ln_gain_{gate}")), p.slice(&format!("{dir}.ln_beta_{gate}"))) {
        let m = mean(&out);
        let var = out.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nh as f64;
        let sd = (var + 1e-5).sqrt();
        for j in 0..nh {
            out[j] = g[j] * (out[j] - m) / sd + beta[j];
        }
    }
    out
}

pub fn rnn(p: &ModelParams, dir: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    preact(p, dir, "h", h, x).iter().map(|v| v.tanh()).collect()
}

pub fn lstm(p: &ModelParams, dir: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let f: Vec<f64> = preact(p, dir, "f", h, x).into_iter().map(sig).collect();
    let i: Vec<f64> = preact(p, dir, "i", h, x).into_iter().map(sig).collect();
    let g: Vec<f64> = preact(p, dir, "C", h, x).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = preact(p, dir, "o", h, x).into_iter().map(sig).collect();
    let c_new: Vec<f64> = (0..h.len()).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
    let h_new = (0..h.len()).map(|j| o[j] * c_new[j].tanh()).collect();
    (h_new, c_new)
}

pub fn gru(p: &ModelParams, dir: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = preact(p, dir, "r", h, x).into_iter().map(sig).collect();
    let z: Vec<f64> = preact(p, dir, "z", h, x).into_iter().map(sig).collect();
    let rh: Vec<f64> = (0..h.len()).map(|j| r[j] * h[j]).collect();
    let n: Vec<f64> = preact(p, dir, "n", &rh, x).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|j| (1.0 - z[j]) * h[j] + z[j] * n[j]).collect()
}

/// The GRU candidate state `n = tanh(W_n [r * h; x])`.
pub fn gru_candidate(p: &ModelParams, dir: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = preact(p, dir, "r", h, x).into_iter().map(sig).collect();
    let rh: Vec<f64> = (0..h.len()).map(|j| r[j] * h[j]).collect();
    preact(p, dir, "n", &rh, x).into_iter().map(f64::tanh).collect()
}
