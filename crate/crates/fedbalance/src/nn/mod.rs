//! Minimal differentiable network engine: a fixed layer menu with
//! hand-written forward and backward passes, SGD with momentum and weight
//! decay, and MAC counting.

mod arch;
mod model;
mod ops;

pub use arch::{count_macs, ArchDescriptor, InputShape, LayerSpec, Shape};
pub use model::{init_model, sgd_step, Batch, ModelParams, OptState};
pub use ops::{backward, forward, infer_logits, softmax, softmax_cross_entropy, Forward, Mat, Tape};
