//! Adam, the two training stages, and per-view execution.

mod adam;
mod config;
mod exec;
mod history;
mod stage1;
mod stage2;

pub use adam::{adam_step, AdamHyper, Moments};
pub use config::{Ablations, LearningRates, TrainConfig};
pub use exec::{Serial, ViewExecutor};
pub use history::{LossHistory, LossRecord};
pub use stage1::{
    finish_stage1, init_model, label_gaussians, learned_permutations, stage1_init, view_confidence,
    view_pass, view_permutation, Stage1, Stage1Model, Stage1Moments, Stage1Output, TrainState,
    ViewPass,
};
pub use stage2::{
    continue_stage2, extrapolate, stage2_sequential, track_timestep, Stage2Output, TimestepLoss,
};
