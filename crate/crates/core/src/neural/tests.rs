use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CELLS: [CellKind; 3] = [CellKind::Rnn, CellKind::Lstm, CellKind::Gru];

fn toy_config(cell: CellKind, layer_norm: bool, bidirectional: bool) -> EncoderConfig {
    EncoderConfig { cell, hidden: 3, bidirectional, dropout: 0.3, embed_dim: 2, n_tasks: 3, feature_dim: 2, layer_norm }
}

/// Initialized parameters with every entry jittered so that no block sits at
/// a special value (unit gains, zero offsets).
fn jittered(cfg: &EncoderConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, &mut rng).unwrap();
    for v in p.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    p
}

fn window(rows: usize, cols: usize, task_id: usize, seed: u64) -> WindowBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    WindowBatch {
        window: (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        rows,
        cols,
        task_id,
        statics: [1.0, 0.7, 1.0, 0.4],
        subject_id: "S001".into(),
        label: crate::model::Label::Ad,
    }
}

fn bce(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn loss(params: &ModelParams, batch: &[(WindowBatch, f64, Option<Vec<f64>>)]) -> f64 {
    batch
        .iter()
        .map(|(w, y, m)| bce(forward(w, params, m.as_deref()).unwrap().prob(), *y))
        .sum()
}

fn analytic(params: &ModelParams, batch: &[(WindowBatch, f64, Option<Vec<f64>>)]) -> Vec<f64> {
    let mut g = vec![0.0; params.len()];
    for (w, y, m) in batch {
        let tr = forward(w, params, m.as_deref()).unwrap();
        backward_logit(&tr, tr.prob() - y, params, &mut g);
    }
    g
}

fn toy_batch(cfg: &EncoderConfig) -> Vec<(WindowBatch, f64, Option<Vec<f64>>)> {
    let hd = cfg.directions() * cfg.hidden;
    let mask: Vec<f64> = (0..hd).map(|k| if k % 3 == 1 { 0.0 } else { 1.0 / 0.7 }).collect();
    vec![
        (window(4, 2, 1, 11), 1.0, None),
        (window(4, 2, 2, 12), 0.0, Some(mask)),
    ]
}

#[test]
fn gradients_match_finite_differences() {
    let eps = 1e-4;
    for cell in CELLS {
        for ln in [true, false] {
            for bi in [true, false] {
                let cfg = toy_config(cell, ln, bi);
                let params = jittered(&cfg, 3);
                let batch = toy_batch(&cfg);
                let g = analytic(&params, &batch);
                let mut worst = 0.0f64;
                for k in 0..params.len() {
                    let mut plus = params.clone();
                    plus.values_mut()[k] += eps;
                    let mut minus = params.clone();
                    minus.values_mut()[k] -= eps;
                    let num = (loss(&plus, &batch) - loss(&minus, &batch)) / (2.0 * eps);
                    let rel = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
                assert!(worst < 1e-4, "{cell} ln={ln} bi={bi}: worst relative error {worst:e}");
            }
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for cell in CELLS {
        let cfg = toy_config(cell, true, true);
        let params = jittered(&cfg, 5);
        // Touch all three task rows so every embedding entry is used.
        let batch: Vec<_> = (1..=3).map(|t| (window(4, 2, t, 20 + t as u64), (t % 2) as f64, None)).collect();
        let g = analytic(&params, &batch);
        for e in params.manifest() {
            for k in e.range() {
                assert!(g[k] != 0.0, "{cell}: {} entry {} has zero gradient", e.name, k - e.offset);
            }
        }
    }
}

#[test]
fn unused_embedding_rows_get_exactly_zero_gradient() {
    let cfg = toy_config(CellKind::Gru, true, true);
    let params = jittered(&cfg, 8);
    let tr = forward(&window(4, 2, 2, 1), &params, None).unwrap();
    let mut g = vec![0.0; params.len()];
    backward(&tr, 0.7, &params, &mut g);
    let e = params.entry("embedding").unwrap();
    let rows: Vec<&[f64]> = g[e.range()].chunks(2).collect();
    assert_eq!(rows[0], &[0.0, 0.0]);
    assert_eq!(rows[2], &[0.0, 0.0]);
    assert!(rows[1].iter().all(|v| *v != 0.0));
}

#[test]
fn gradients_are_linear_in_upstream() {
    let cfg = toy_config(CellKind::Lstm, true, true);
    let params = jittered(&cfg, 9);
    let tr = forward(&window(4, 2, 1, 2), &params, None).unwrap();
    let mut g1 = vec![0.0; params.len()];
    let mut g2 = vec![0.0; params.len()];
    backward(&tr, 0.4, &params, &mut g1);
    backward(&tr, 0.8, &params, &mut g2);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn input_width_is_features_plus_embedding() {
    for (f, want) in [(27, 59), (31, 63)] {
        let cfg = EncoderConfig { feature_dim: f, hidden: 2, ..Default::default() };
        assert_eq!(cfg.input_dim(), want);
        let p = ModelParams::zeros(&cfg).unwrap();
        let x = embed_and_concat(&window(3, f, 5, 0), &p).unwrap();
        assert!(x.iter().all(|r| r.len() == want));
        // zero table appends zeros
        assert!(x.iter().all(|r| r[f..].iter().all(|v| *v == 0.0)));
    }
}

#[test]
fn embedding_row_repeats_on_every_step() {
    let cfg = toy_config(CellKind::Rnn, true, true);
    let p = jittered(&cfg, 1);
    let w = window(5, 2, 3, 4);
    let x = embed_and_concat(&w, &p).unwrap();
    let row = p.embedding_row(3).unwrap();
    for (t, xt) in x.iter().enumerate() {
        assert_eq!(&xt[..2], w.row(t));
        assert_eq!(&xt[2..], row);
    }
}

#[test]
fn unknown_task_is_an_error() {
    let cfg = toy_config(CellKind::Rnn, true, true);
    let p = jittered(&cfg, 1);
    assert!(matches!(embed_and_concat(&window(2, 2, 0, 0), &p), Err(Error::UnknownTask(0))));
    assert!(matches!(embed_and_concat(&window(2, 2, 4, 0), &p), Err(Error::UnknownTask(4))));
}

#[test]
fn rnn_zero_weights_give_tanh_of_bias() {
    let cfg = toy_config(CellKind::Rnn, false, false);
    let mut p = ModelParams::zeros(&cfg).unwrap();
    p.slice_mut("fwd.b_h").unwrap().copy_from_slice(&[0.3, -1.2, 2.0]);
    let h = rnn_step(&p, 0, &[0.0; 4], &[0.0; 3]);
    for (a, b) in h.iter().zip([0.3f64, -1.2, 2.0]) {
        assert_eq!(*a, b.tanh());
    }
}

#[test]
fn rnn_without_recurrent_block_ignores_history() {
    let cfg = toy_config(CellKind::Rnn, true, false);
    let mut p = jittered(&cfg, 2);
    let w = p.slice_mut("fwd.W_h").unwrap();
    for j in 0..3 {
        w[j * 7..j * 7 + 3].fill(0.0);
    }
    let x = [0.2, -0.1, 0.5, 0.9];
    assert_eq!(rnn_step(&p, 0, &x, &[0.0; 3]), rnn_step(&p, 0, &x, &[0.9, -0.4, 0.1]));
}

#[test]
fn lstm_saturated_gates() {
    let cfg = toy_config(CellKind::Lstm, false, false);
    let mut p = jittered(&cfg, 3);
    // f -> 1, i -> 0
    p.slice_mut("fwd.W_f").unwrap().fill(0.0);
    p.slice_mut("fwd.W_i").unwrap().fill(0.0);
    p.slice_mut("fwd.b_f").unwrap().fill(40.0);
    p.slice_mut("fwd.b_i").unwrap().fill(-40.0);
    let c_prev = [0.5, -0.7, 0.2];
    let (_, c) = lstm_step(&p, 0, &[0.3, 0.1, -0.2, 0.4], &[0.1, 0.2, 0.3], &c_prev);
    for (a, b) in c.iter().zip(c_prev) {
        assert!((a - b).abs() < 1e-6);
    }
    // o -> 0
    p.slice_mut("fwd.W_o").unwrap().fill(0.0);
    p.slice_mut("fwd.b_o").unwrap().fill(-40.0);
    let (h, _) = lstm_step(&p, 0, &[0.3, 0.1, -0.2, 0.4], &[0.1, 0.2, 0.3], &c_prev);
    assert!(h.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn gru_saturated_gates() {
    let cfg = toy_config(CellKind::Gru, true, false);
    let mut p = jittered(&cfg, 4);
    let x = [0.3, 0.1, -0.2, 0.4];
    let h_prev = [0.5, -0.3, 0.8];
    p.slice_mut("fwd.W_z").unwrap().fill(0.0);
    p.slice_mut("fwd.ln_beta_z").unwrap().fill(-40.0);
    let h = gru_step(&p, 0, &x, &h_prev);
    for (a, b) in h.iter().zip(h_prev) {
        assert!((a - b).abs() < 1e-6);
    }
    p.slice_mut("fwd.ln_beta_z").unwrap().fill(40.0);
    let h = gru_step(&p, 0, &x, &h_prev);
    let mut cache = StepCache::default();
    p.cell(0).step(&x, &h_prev, &[], &mut cache);
    for (a, b) in h.iter().zip(&cache.gates[2].out) {
        assert!((a - b).abs() < 1e-6);
    }
    // r -> 0: the candidate no longer sees h_prev
    p.slice_mut("fwd.W_r").unwrap().fill(0.0);
    p.slice_mut("fwd.ln_beta_r").unwrap().fill(-60.0);
    let a = gru_step(&p, 0, &x, &h_prev);
    let b = gru_step(&p, 0, &x, &[-0.9, 0.9, 0.0]);
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn palindrome_with_tied_directions_is_symmetric() {
    for cell in CELLS {
        let cfg = toy_config(cell, true, true);
        let mut p = jittered(&cfg, 6);
        let vals = p.values().to_vec();
        for e in p.manifest().to_vec() {
            if let Some(name) = e.name.strip_prefix("fwd.") {
                let src = vals[e.range()].to_vec();
                p.slice_mut(&format!("bwd.{name}")).unwrap().copy_from_slice(&src);
            }
        }
        let mut w = window(5, 2, 1, 7);
        for r in 0..2 {
            for c in 0..2 {
                w.window[(4 - r) * 2 + c] = w.window[r * 2 + c];
            }
        }
        let x = embed_and_concat(&w, &p).unwrap();
        let (h, _) = encode_bidirectional(&x, &p);
        assert_eq!(h[..3], h[3..], "{cell}");
    }
}

#[test]
fn single_step_window() {
    let cfg = toy_config(CellKind::Gru, true, true);
    let p = jittered(&cfg, 6);
    let x = embed_and_concat(&window(1, 2, 1, 3), &p).unwrap();
    let (h, _) = encode_bidirectional(&x, &p);
    assert_eq!(h[..3].to_vec(), gru_step(&p, 0, &x[0], &[0.0; 3]));
    assert_eq!(h[3..].to_vec(), gru_step(&p, 1, &x[0], &[0.0; 3]));
}

#[test]
fn fused_width_follows_directions() {
    for cell in CELLS {
        for bi in [true, false] {
            let cfg = EncoderConfig { cell, hidden: 5, bidirectional: bi, feature_dim: 2, embed_dim: 2, n_tasks: 3, ..Default::default() };
            let p = jittered(&cfg, 1);
            let tr = forward(&window(3, 2, 1, 1), &p, None).unwrap();
            assert_eq!(tr.fused.z.len(), if bi { 14 } else { 9 });
            assert_eq!(cfg.fused_dim(), tr.fused.z.len());
        }
    }
    let cfg = EncoderConfig { hidden: 128, ..Default::default() };
    assert_eq!(cfg.directions() * cfg.hidden, 256);
}

#[test]
fn head_behaviour() {
    let cfg = toy_config(CellKind::Gru, true, true);
    let mut p = jittered(&cfg, 2);
    let w = window(3, 2, 1, 1);
    let a = predict(&w, &p).unwrap();
    assert_eq!(a.to_bits(), predict(&w, &p).unwrap().to_bits());

    let mut w0 = w.clone();
    w0.statics = [0.0; 4];
    p.slice_mut("head.w").unwrap()[6..].copy_from_slice(&[0.5, 0.1, -0.3, 0.2]);
    assert_ne!(predict(&w, &p).unwrap(), predict(&w0, &p).unwrap());

    p.slice_mut("head.w").unwrap().fill(0.0);
    p.slice_mut("head.b").unwrap().fill(0.0);
    assert_eq!(predict(&w, &p).unwrap(), 0.5);
}

#[test]
fn dropout_mask_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = dropout_mask(200_000, 0.3, &mut rng);
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    assert!((mean - 1.0).abs() < 0.01);
    assert!(m.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-15));
    assert_eq!(dropout_mask(4, 0.0, &mut rng), vec![1.0; 4]);
}

#[test]
fn lstm_hidden_stays_in_unit_box() {
    let cfg = EncoderConfig { cell: CellKind::Lstm, hidden: 6, feature_dim: 2, embed_dim: 2, n_tasks: 3, ..Default::default() };
    let mut p = jittered(&cfg, 3);
    for v in p.values_mut() {
        *v *= 8.0;
    }
    let x = embed_and_concat(&window(40, 2, 2, 5), &p).unwrap();
    let (_, tr) = encode_bidirectional(&x, &p);
    for d in tr {
        assert!(d.hs.iter().flatten().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn init_layout() {
    let cfg = EncoderConfig { cell: CellKind::Lstm, hidden: 16, layer_norm: false, ..Default::default() };
    let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bound = 0.25;
    assert!(p.slice("fwd.W_o").unwrap().iter().all(|v| v.abs() <= bound));
    assert!(p.slice("bwd.b_f").unwrap().iter().all(|v| *v == 1.0));
    assert!(p.slice("bwd.b_i").unwrap().iter().all(|v| *v == 0.0));
    assert!(p.slice("head.w").unwrap()[32..].iter().all(|v| *v == 0.0));
    let total: usize = p.manifest().iter().map(ParamEntry::len).sum();
    assert_eq!(total, p.len());

    let gru = EncoderConfig { layer_norm: false, ..Default::default() };
    let p = ModelParams::zeros(&gru).unwrap();
    assert!(p.manifest().iter().all(|e| !e.name.contains(".b_")));

    assert!(EncoderConfig { hidden: 0, ..Default::default() }.validate().is_err());
    assert!(EncoderConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
}
