//! Numeric building blocks shared by every other module.

mod dataset;
pub mod generators;
pub mod linalg;
mod ops;
mod params;
mod rng;
mod tensor;
mod prepare;
mod zca;

pub use dataset::{ChannelStats, LabeledDataset};
pub use generators::{BlobsSpec, MoonsSpec};
pub use ops::{argmax, cross_entropy, log_softmax_row, softmax, softmax_row};
pub(crate) use ops::cross_entropy_unchecked;
pub use params::{param_distance_sq, LayoutEntry, ParamLayout, ParamVector};
pub use rng::Rng;
pub use tensor::{Precision, Tensor};
pub use prepare::{prepare_splits, Prepared};
pub use zca::{zca_whiten, WhiteningTransform, DEFAULT_ZCA_EPSILON};
