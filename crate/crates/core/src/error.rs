use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error("nothing to train: every layer is frozen")]
    NothingToTrain,
    #[error("class {class} has {available} samples, {requested} requested")]
    ClassUnderpopulated {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("invalid layer index {layer} (model has {hidden} hidden layers)")]
    InvalidLayer { layer: usize, hidden: usize },
    #[error("key derivation did not converge after {iterations} iterations ({mismatches} rows unsatisfied)")]
    NonConvergence { iterations: usize, mismatches: usize },
    #[error("auxiliary vector is zero")]
    ZeroAuxiliary,
    #[error("average activation vector is zero; scaling factor has no effect")]
    DegenerateActivation,
    #[error("no scaling factor in [{from}, {to}] satisfies the key security constraint")]
    AlphaSearchExhausted { from: f64, to: f64 },
    #[error("incompatible architecture: {0}")]
    IncompatibleArchitecture(String),
    #[error("trigger set digest does not match the key record")]
    TriggerMismatch,
    #[error("watermark commitment mismatch; claim rejected")]
    CommitmentMismatch,
    #[error("key record {0} not found")]
    NotFound(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
