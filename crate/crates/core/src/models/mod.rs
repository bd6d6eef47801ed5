//! Classifier zoo, exact gradients, and differentiable SGD unrolls.

pub mod arch;
mod kernels;
pub mod network;
pub mod unroll;

pub use arch::{ArchSpec, Layer, Tier};
pub use network::{accuracy, dataset_loss, forward, grad_dot_backward, init_network, loss_grad, predict, SecondOrder};
pub use unroll::{meta_backward, unroll, unroll_record, BatchPlan, GradTape, MetaGrads, UnrollInput, DIVERGENCE_LIMIT};
