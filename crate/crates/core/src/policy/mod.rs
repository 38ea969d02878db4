//! MLP policy/value network with exact reverse-mode gradients.

mod checkpoint;
mod functional;
mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use functional::{grad_scalar, Expr, PolicyFunctional};
pub use network::{sample, Activation, GradVector, NetworkShape, PolicyOutput, PolicyParams};
