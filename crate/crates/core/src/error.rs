use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("cannot parse `{value}` as a number at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("label `{label}` at row {row} is outside the declared classes")]
    UnknownLabel { row: usize, label: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("column `{0}` has no observed values to impute from")]
    EmptyColumn(String),

    #[error("class {class} has {count} rows, fewer than the {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("teacher failed on fold {fold}: {reason}")]
    TeacherFit { fold: usize, reason: String },

    #[error("soft labels: {0}")]
    SoftLabels(String),

    #[error("fold mismatch at row {row}: file says {found}, assignment says {expected}")]
    FoldMismatch {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("leakage audit failed: {count} rows were scored by a teacher that saw them (first: {first:?})")]
    Leakage { count: usize, first: Vec<usize> },

    #[error("expected {expected} features, got {found}")]
    FeatureMismatch { expected: usize, found: usize },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from invalid user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Leakage { .. })
    }
}
