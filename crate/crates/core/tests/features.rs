mod common;

use std::f64::consts::PI;

use common::oracle;
use strokeseq::kinematics::{
    differentiate, extract_task_features, idx, normalized_jerk, segment_strokes, straightness_error, JerkAxis,
    SegmentationMode, N_FEATURES,
};
use strokeseq::model::{PenSample, Stroke, TaskRecording, SAMPLE_PERIOD};

fn stroke(n: usize, f: impl Fn(f64) -> (f64, f64)) -> Stroke {
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * SAMPLE_PERIOD;
            let (x, y) = f(t);
            PenSample { t, x, y, pressure: 0.6, on_paper: true }
        })
        .collect();
    Stroke::new(1, samples)
}

fn single(s: Stroke) -> TaskRecording {
    TaskRecording { subject_id: "S001".into(), task_id: 1, strokes: vec![s] }
}

#[test]
fn library_matches_brute_force_on_generated_strokes() {
    let (_, recs, feats) = common::cohort(&common::small_config(11, 2));
    let mut checked = 0;
    for (rec, tf) in recs.iter().zip(&feats) {
        let want = oracle::task_features(rec);
        assert_eq!(want.len(), tf.rows.len());
        for (got, want) in tf.rows.iter().zip(&want) {
            for k in 0..N_FEATURES {
                assert!(
                    oracle::close(got[k], want[k], 1e-9),
                    "{} task {} feature {k}: {} vs {}",
                    rec.subject_id,
                    rec.task_id,
                    got[k],
                    want[k]
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} strokes checked");
}

#[test]
fn horizontal_segment_closed_forms() {
    // 1 unit in 0.5 s: 101 samples at 5 ms
    let s = stroke(101, |t| (2.0 * t, 0.0));
    let f = &extract_task_features(&single(s)).unwrap().rows[0];
    assert!((f[idx::DURATION] - 0.5).abs() < 1e-12);
    assert_eq!(f[idx::SLANT], 0.0);
    assert!(f[idx::STRAIGHTNESS].abs() < 1e-12);
    assert!((f[idx::ROAD_LENGTH] - 1.0).abs() < 1e-12);
    assert!((f[idx::MEAN_SPEED] - 2.0).abs() < 1e-9);
    assert!(f[idx::NJ] < 1e-6);
}

#[test]
fn unit_circle_arc_and_closed_road_length() {
    let n = 201;
    let s = stroke(n, |t| ((2.0 * PI * t).cos(), (2.0 * PI * t).sin()));
    let arc: f64 = s.samples.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
    assert!((arc - 2.0 * PI).abs() < 0.01 * 2.0 * PI);
    assert!(straightness_error(&s).is_err());
    let f = &extract_task_features(&single(s)).unwrap().rows[0];
    // closed stroke: arc over the bounding-box diagonal
    assert!((f[idx::ROAD_LENGTH] - arc / 8f64.sqrt()).abs() < 1e-3);
}

#[test]
fn semicircle_straightness_matches_oracle() {
    let pts: Vec<(f64, f64)> = (0..100).map(|i| {
        let a = PI * i as f64 / 99.0;
        (a.cos(), a.sin())
    }).collect();
    let s = stroke(100, |t| pts[(t / SAMPLE_PERIOD).round() as usize]);
    let want = oracle::tls_spread(&pts) / 2.0;
    assert!((straightness_error(&s).unwrap() - want).abs() < 1e-9);
}

#[test]
fn quintic_normalized_jerk() {
    // minimum-jerk profile over 1 s and unit length: ∫ j² dt = 720, so the
    // continuous value is sqrt(360)
    let q = |t: f64| 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5);
    let s = stroke(201, |t| (q(t), 0.0));
    let k = differentiate(&s).unwrap();
    let arc: f64 = s.samples.windows(2).map(|w| (w[1].x - w[0].x).abs()).sum();
    let got = normalized_jerk(&k, 1.0, arc, JerkAxis::Both).unwrap();
    let rec = single(s.clone());
    let want = oracle::task_features(&rec)[0][idx::NJ];
    assert!((got - want).abs() < 1e-6 * want);
    // one-sided end differences smear the jerk near the edges
    assert!((got - 360f64.sqrt()).abs() < 0.15 * 360f64.sqrt(), "nj {got}");
}

#[test]
fn normalized_jerk_is_invariant_to_time_dilation() {
    let path = |u: f64| (u, 0.3 * (PI * u).sin() + 0.1 * u * u);
    let profile = |u: f64| u - (2.0 * PI * u).sin() / (2.0 * PI);
    let nj_for = |secs: f64| {
        let n = (secs / SAMPLE_PERIOD).round() as usize + 1;
        let s = stroke(n, |t| path(profile(t / secs)));
        extract_task_features(&single(s)).unwrap().rows[0][idx::NJ]
    };
    let (a, b) = (nj_for(0.5), nj_for(1.0));
    assert!((a - b).abs() < 0.05 * b, "{a} vs {b}");
}

#[test]
fn constant_velocity_has_zero_jerk_features() {
    let s = stroke(60, |t| (3.0 * t, -t));
    let f = &extract_task_features(&single(s)).unwrap().rows[0];
    assert!(f[idx::NJ] < 1e-6 && f[idx::NJ_Y] < 1e-6);
    assert!(f[idx::RMS_JERK] < 1e-3);
}

#[test]
fn velocity_inversion_count_matches_analytic_crossings() {
    // three half-periods of a vertical sine give two interior inversions
    let n = 241;
    let total = (n - 1) as f64 * SAMPLE_PERIOD;
    let samples: Vec<PenSample> = stroke(n, |t| (0.2 * t, -(3.0 * PI * t / total).cos())).samples;
    let strokes = segment_strokes(&samples, SegmentationMode::PenStateAndVelocityInversion);
    assert_eq!(strokes.len(), 3);
    let joined: Vec<PenSample> = strokes.into_iter().flat_map(|s| s.samples).collect();
    assert_eq!(joined, samples);
}
