#![allow(dead_code)]

pub mod oracle;

use strokeseq::kinematics::extract_task_features;
use strokeseq::model::{SubjectRecord, TaskFeatures, TaskRecording};
use strokeseq::synth::{generate_cohort, GeneratorConfig};

/// A small cohort over a handful of tasks.
pub fn small_config(seed: u64, n: usize) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        n_ad: n,
        n_hc: n,
        tasks: vec![1, 2, 5, 9],
        ..Default::default()
    }
}

pub fn cohort(cfg: &GeneratorConfig) -> (Vec<SubjectRecord>, Vec<TaskRecording>, Vec<TaskFeatures>) {
    let (subjects, recs) = generate_cohort(cfg).unwrap();
    let feats = recs.iter().map(|r| extract_task_features(r).unwrap()).collect();
    (subjects, recs, feats)
}
