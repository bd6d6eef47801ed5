use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Per-class shortfall reported when a subset cannot supply `ipc` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassDeficit {
    pub class: usize,
    pub available: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("soft targets row {row} sums to {sum}, expected 1")]
    InvalidTargets { row: usize, sum: f64 },
    #[error("covariance eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("divergent unroll at step {step}")]
    DivergentUnroll { step: usize },
    #[error("expert diverged at epoch {epoch}")]
    ExpertDiverged { epoch: usize },
    #[error("segment out of range: t={t}, span={span}, horizon={horizon}")]
    SegmentOutOfRange { t: usize, span: usize, horizon: usize },
    #[error("degenerate expert segment (distance {distance_sq:e})")]
    DegenerateSegment { distance_sq: f64 },
    #[error("class {class} exhausted by filter")]
    ClassExhausted { class: usize },
    #[error("insufficient samples per class: {0:?}")]
    InsufficientSamples(Vec<ClassDeficit>),
    #[error("{failures} consecutive failed iterations, last: {last}")]
    TooManyFailures { failures: usize, last: String },
    #[error("expert horizon {horizon} too short: {reason}")]
    HorizonTooShort { horizon: usize, reason: String },
}
