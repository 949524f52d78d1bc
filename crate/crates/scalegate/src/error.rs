use thiserror::Error;

/// Errors raised by tensor arithmetic and graph construction.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape {shape:?} does not match {len} elements")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },

    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected a scalar operand, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },

    #[error("layer_norm: degenerate input of length {0} (need at least 2)")]
    DegenerateInput(usize),

    #[error("softmax_cross_entropy: label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    #[error("gradient check requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
}

/// Errors from scale annotations and tier assignment.
#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("ground sampling distance must be positive and finite, got {0}")]
    NonPositive(f64),

    #[error("range bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },

    #[error("unknown-scale annotation carries no tier")]
    NoTier,
}

/// Errors from corpus generation, JSONL I/O and the balanced sampler.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),

    #[error("{path}: line {line}: {cause}")]
    Load {
        path: String,
        line: usize,
        cause: String,
    },

    #[error("io error on {path}: {cause}")]
    Io { path: String, cause: String },

    #[error("sampler: {0}")]
    Sampler(String),
}

/// Errors from training, checkpointing and diagnostics.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),

    #[error("dimension conflict: {0}")]
    DimConflict(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("checkpoint {path}: {cause}")]
    Checkpoint { path: String, cause: String },

    #[error("diagnostic contract violated: {0}")]
    Contract(String),

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    Data(#[from] DataError),
}
