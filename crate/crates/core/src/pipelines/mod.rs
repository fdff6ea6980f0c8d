//! End-to-end training, distillation and fusion.

mod config;
mod distill;
mod fusion;
mod train;

pub use config::{DistillConfig, FusionConfig, FusionMode, PseudoRing, TrainConfig};
pub use distill::{distill, pseudo_ring, DistillOutput};
pub use fusion::{fuse, metric_select, pixel_weighted, FusionWeights};
pub use train::{
    input_masks, render_views, scene_bounds, score_images, score_targets, train, train_from, write_renders,
    TrainLog, TrainOutput, TrainedModel, COARSE_CHECKPOINT, FINE_CHECKPOINT, MODEL_FILE,
};
