//! Single-step recurrent cells with layer-normalized pre-activations and
//! their hand-derived reverse-mode gradients.

use super::{CellKind, GateOffsets};

pub const LN_EPS: f64 = 1e-5;

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Read-only view of one direction's cell parameters inside the flat vector.
#[derive(Clone, Copy)]
pub struct CellView<'a> {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: usize,
    pub values: &'a [f64],
    pub gates: &'a [GateOffsets],
}

/// Cached intermediates of one gate.
#[derive(Debug, Clone, Default)]
pub struct GateCache {
    /// Normalized pre-activation (layer norm only).
    pub nhat: Vec<f64>,
    pub inv_std: f64,
    /// Post-nonlinearity output.
    pub out: Vec<f64>,
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone, Default)]
pub struct StepCache {
    /// `[h_prev; x]`.
    pub u: Vec<f64>,
    /// GRU candidate input `[r * h_prev; x]`.
    pub u_cand: Vec<f64>,
    pub gates: Vec<GateCache>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Sigmoid,
    Tanh,
}

fn gate_act(kind: CellKind, g: usize) -> Act {
    match (kind, g) {
        (CellKind::Rnn, _) => Act::Tanh,
        (CellKind::Lstm, 2) => Act::Tanh,
        (CellKind::Lstm, _) => Act::Sigmoid,
        (CellKind::Gru, 2) => Act::Tanh,
        (CellKind::Gru, _) => Act::Sigmoid,
    }
}

impl<'a> CellView<'a> {
    fn width(&self) -> usize {
        self.hidden + self.input
    }

    /// Pre-activation `W u (+ b)`, layer-normalized when enabled, then the
    /// gate nonlinearity.
    fn gate_forward(&self, g: usize, u: &[f64]) -> GateCache {
        let off = &self.gates[g];
        let (h, width) = (self.hidden, self.width());
        let w = &self.values[off.w..off.w + h * width];
        let mut a: Vec<f64> = (0..h)
            .map(|j| {
                dot(&w[j * width..(j + 1) * width], u)
            })
            .collect();
        if let Some(b) = off.b {
            for (j, v) in a.iter_mut().enumerate() {
                *v += self.values[b + j];
            }
        }
        let mut cache = GateCache::default();
        if let (Some(gain), Some(beta)) = (off.gain, off.beta) {
            let mean = a.iter().sum::<f64>() / h as f64;
            let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            cache.nhat = a.iter().map(|v| (v - mean) * inv).collect();
            cache.inv_std = inv;
            for j in 0..h {
                a[j] = self.values[gain + j] * cache.nhat[j] + self.values[beta + j];
            }
        }
        let act = gate_act(self.kind, g);
        cache.out = a
            .into_iter()
            .map(|v| match act {
                Act::Sigmoid => sigmoid(v),
                Act::Tanh => v.tanh(),
            })
            .collect();
        cache
    }

    /// One recurrence step. Returns `(h, c)`; `c` is empty except for LSTM.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], cache: &mut StepCache) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(h_prev.len(), self.hidden);
        let h = self.hidden;
        cache.u.clear();
        cache.u.extend_from_slice(h_prev);
        cache.u.extend_from_slice(x);
        cache.gates.clear();
        match self.kind {
            CellKind::Rnn => {
                let g = self.gate_forward(0, &cache.u);
                let out = g.out.clone();
                cache.gates.push(g);
                (out, Vec::new())
            }
            CellKind::Lstm => {
                for g in 0..4 {
                    let gc = self.gate_forward(g, &cache.u);
                    cache.gates.push(gc);
                }
                let (f, i, cand, o) = (
                    &cache.gates[0].out,
                    &cache.gates[1].out,
                    &cache.gates[2].out,
                    &cache.gates[3].out,
                );
                let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * cand[j]).collect();
                cache.c_prev = c_prev.to_vec();
                cache.tanh_c = c.iter().map(|v| v.tanh()).collect();
                let hn = (0..h).map(|j| o[j] * cache.tanh_c[j]).collect();
                (hn, c)
            }
            CellKind::Gru => {
                let r = self.gate_forward(0, &cache.u);
                let z = self.gate_forward(1, &cache.u);
                cache.u_cand.clear();
                cache.u_cand.extend((0..h).map(|j| r.out[j] * h_prev[j]));
                cache.u_cand.extend_from_slice(x);
                let n = self.gate_forward(2, &cache.u_cand);
                let hn = (0..h)
                    .map(|j| (1.0 - z.out[j]) * h_prev[j] + z.out[j] * n.out[j])
                    .collect();
                cache.gates.push(r);
                cache.gates.push(z);
                cache.gates.push(n);
                (hn, Vec::new())
            }
        }
    }

    /// Backpropagates `dy` (gradient w.r.t. the post-layer-norm,
    /// pre-nonlinearity value) through layer norm and the matrix product.
    /// Accumulates parameter gradients into `grads` and input gradients into `du`.
    fn gate_backward(&self, g: usize, cache: &GateCache, mut dy: Vec<f64>, u: &[f64], grads: &mut [f64], du: &mut [f64]) {
        let off = &self.gates[g];
        let (h, width) = (self.hidden, self.width());
        if let (Some(gain), Some(beta)) = (off.gain, off.beta) {
            let nhat = &cache.nhat;
            let mut dn = vec![0.0; h];
            for j in 0..h {
                grads[gain + j] += dy[j] * nhat[j];
                grads[beta + j] += dy[j];
                dn[j] = dy[j] * self.values[gain + j];
            }
            let mean_dn = dn.iter().sum::<f64>() / h as f64;
            let mean_dn_n = dn.iter().zip(nhat).map(|(a, b)| a * b).sum::<f64>() / h as f64;
            for j in 0..h {
                dy[j] = cache.inv_std * (dn[j] - mean_dn - nhat[j] * mean_dn_n);
            }
        }
        if let Some(b) = off.b {
            for j in 0..h {
                grads[b + j] += dy[j];
            }
        }
        let w = &self.values[off.w..off.w + h * width];
        for j in 0..h {
            let da = dy[j];
            if da == 0.0 {
                continue;
            }
            let row = &w[j * width..(j + 1) * width];
            let grow = &mut grads[off.w + j * width..off.w + (j + 1) * width];
            for k in 0..width {
                grow[k] += da * u[k];
                du[k] += da * row[k];
            }
        }
    }

    /// Reverse step. Takes the gradients w.r.t. this step's outputs `h` (and
    /// `c` for LSTM) and returns `(dh_prev, dc_prev, dx)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        h_prev: &[f64],
        dh: &[f64],
        dc: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let mut du = vec![0.0; self.width()];
        let mut dh_prev = vec![0.0; h];
        let mut dc_prev = Vec::new();
        match self.kind {
            CellKind::Rnn => {
                let out = &cache.gates[0].out;
                let dy = (0..h).map(|j| dh[j] * (1.0 - out[j] * out[j])).collect();
                self.gate_backward(0, &cache.gates[0], dy, &cache.u, grads, &mut du);
            }
            CellKind::Lstm => {
                let (f, i, cand, o) = (
                    &cache.gates[0].out,
                    &cache.gates[1].out,
                    &cache.gates[2].out,
                    &cache.gates[3].out,
                );
                let tc = &cache.tanh_c;
                let mut dct = vec![0.0; h];
                let mut dyf = vec![0.0; h];
                let mut dyi = vec![0.0; h];
                let mut dyc = vec![0.0; h];
                let mut dyo = vec![0.0; h];
                dc_prev = vec![0.0; h];
                for j in 0..h {
                    let d_o = dh[j] * tc[j];
                    dct[j] = dc[j] + dh[j] * o[j] * (1.0 - tc[j] * tc[j]);
                    dyf[j] = dct[j] * cache.c_prev[j] * f[j] * (1.0 - f[j]);
                    dyi[j] = dct[j] * cand[j] * i[j] * (1.0 - i[j]);
                    dyc[j] = dct[j] * i[j] * (1.0 - cand[j] * cand[j]);
                    dyo[j] = d_o * o[j] * (1.0 - o[j]);
                    dc_prev[j] = dct[j] * f[j];
                }
                for (g, dy) in [dyf, dyi, dyc, dyo].into_iter().enumerate() {
                    self.gate_backward(g, &cache.gates[g], dy, &cache.u, grads, &mut du);
                }
            }
            CellKind::Gru => {
                let (r, z, n) = (&cache.gates[0].out, &cache.gates[1].out, &cache.gates[2].out);
                let mut dyn_ = vec![0.0; h];
                let mut dyz = vec![0.0; h];
                for j in 0..h {
                    let dn = dh[j] * z[j];
                    let dz = dh[j] * (n[j] - h_prev[j]);
                    dh_prev[j] += dh[j] * (1.0 - z[j]);
                    dyn_[j] = dn * (1.0 - n[j] * n[j]);
                    dyz[j] = dz * z[j] * (1.0 - z[j]);
                }
                let mut du_cand = vec![0.0; self.width()];
                self.gate_backward(2, &cache.gates[2], dyn_, &cache.u_cand, grads, &mut du_cand);
                let mut dyr = vec![0.0; h];
                for j in 0..h {
                    dyr[j] = du_cand[j] * h_prev[j] * r[j] * (1.0 - r[j]);
                    dh_prev[j] += du_cand[j] * r[j];
                }
                for k in h..self.width() {
                    du[k] += du_cand[k];
                }
                self.gate_backward(1, &cache.gates[1], dyz, &cache.u, grads, &mut du);
                self.gate_backward(0, &cache.gates[0], dyr, &cache.u, grads, &mut du);
            }
        }
        for j in 0..h {
            dh_prev[j] += du[j];
        }
        let dx = du[h..].to_vec();
        (dh_prev, dc_prev, dx)
    }
}
