//! Handwriting stroke kinematics, recurrent sequence classifiers and
//! stroke-level ensemble baselines for subject-level screening experiments
//! on synthetic cohorts.

pub mod ensembles;
pub mod error;
pub mod eval;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod neural;
pub mod optim;
pub mod pipeline;
pub mod preprocessing;
pub mod synth;
pub mod tss;

pub use error::{Error, Result};
