use std::path::PathBuf;

use crate::model::OdaClassifier;

pub type Result<T, E = OdaError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum OdaError {
    #[error("vector norm is below 1e-12; cosine similarity is undefined")]
    ZeroNormVector,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("label {label} out of range for {num_classes} known classes")]
    LabelOutOfRange { label: i32, num_classes: usize },

    #[error("no pseudo-label cached for target record {0}")]
    MissingPseudoLabel(u64),

    #[error("{mode} mode received the wrong batches: {detail}")]
    ModeBatchMismatch { mode: &'static str, detail: String },

    #[error("gradient contains NaN or infinite entries")]
    NonFiniteGradient,

    /// The training run diverged. `last_finite` is the model state before the failing step.
    #[error("non-finite loss or parameters at step {step}")]
    NonFiniteLoss {
        step: usize,
        last_finite: Box<OdaClassifier>,
    },

    #[error("value {value} outside [0, 1] for {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("no {0} samples to score")]
    EmptyClass(&'static str),

    #[error("target record {0} has no ground-truth label")]
    MissingLabels(u64),
}

impl OdaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OdaError::Io {
            path: path.into(),
            source,
        }
    }
}
