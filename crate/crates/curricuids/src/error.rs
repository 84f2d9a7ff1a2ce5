//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(String),

    #[error("label column {0:?} not present in header")]
    MissingLabelColumn(String),

    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("cleaning removed every row")]
    AllRowsRemoved,

    #[error("cannot fit a preprocessor on an empty training set")]
    EmptyTrainSet,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input contains a single class; both labels are required")]
    SingleClassInput,

    #[error("unknown dataset kind {0:?}")]
    UnknownDatasetKind(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("convolution kernel width must be odd, got {0}")]
    EvenKernel(usize),

    #[error("tape already consumed by a previous backward pass")]
    TapeReuse,

    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(String),

    #[error("batch has {got} features but the model expects {expected}")]
    FeatureCountMismatch { expected: usize, got: usize },

    #[error("feature restriction requires a non-empty keep set")]
    EmptyKeepSet,

    #[error("stage {index} ({name:?}) matched zero records")]
    EmptyStage { index: usize, name: String },

    #[error("training diverged: loss became non-finite at stage {stage}, epoch {epoch}")]
    DivergenceDetected { stage: usize, epoch: usize },

    #[error("cannot aggregate an empty explanation list")]
    EmptyList,

    #[error("i/o failure: {0}")]
    IoFailure(String),

    #[error("probabilities and labels have different lengths ({probs} vs {labels})")]
    LengthMismatch { probs: usize, labels: usize },

    #[error("fold {fold} is too small or single-class; reduce k_folds")]
    FoldTooSmall { fold: usize },

    #[error("model weight tensor {0:?} contains a non-finite value")]
    NonFiniteWeight(String),

    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
