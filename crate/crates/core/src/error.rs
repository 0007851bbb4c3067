use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("stroke has {0} samples, at least 5 are required")]
    StrokeTooShort(usize),

    #[error("degenerate stroke: {0}")]
    DegenerateStroke(&'static str),

    #[error("invalid subject record {subject}: {reason}")]
    InvalidSubject { subject: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot fit scaler on empty input")]
    EmptyFit,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("both classes must be present (HC={hc}, AD={ad})")]
    SingleClass { hc: usize, ad: usize },

    #[error("class {class} has {count} subjects, fewer than k={k} folds")]
    TooFewSubjects {
        class: &'static str,
        count: usize,
        k: usize,
    },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("meta-learner is not trained")]
    UntrainedMeta,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
