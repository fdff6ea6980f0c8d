//! Dense tensors, reverse-mode differentiation and the optimizer.

mod graph;
pub mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use graph::{Axis, Gradients, Graph, Reduce, Var};
pub use optim::{adam_step, AdamConfig, LrSchedule, OptimizerState, StepOutcome};
pub use params::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use tensor::{Real, Tensor};
