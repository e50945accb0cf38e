use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor of shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: {what} mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("window too short for receptive field: {op} needs at least {needed} samples, got {got}")]
    WindowTooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),

    #[error("batch norm variance undefined: train mode needs batch*length >= 2, got {count}")]
    VarianceUndefined { count: usize },

    #[error("target {target} at row {row} is outside [0, {classes})")]
    TargetOutOfRange {
        row: usize,
        target: usize,
        classes: usize,
    },

    #[error("{op}: empty batch")]
    EmptyBatch { op: &'static str },

    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),

    #[error("internal invariant violated: {op} backward has no retained forward state")]
    MissingForwardState { op: &'static str },
}
