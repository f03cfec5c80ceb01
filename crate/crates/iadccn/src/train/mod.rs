//! Training: losses, Adam, hard sample mining, and the patch-based loop.

mod adam;
mod config;
mod hsm;
mod losses;
mod trainer;

pub use adam::{adam_step, collect_grads, AdamMoments, TrainState};
pub use config::{ExperimentConfig, TrainConfig};
pub use hsm::hard_sample_mine;
pub use losses::{density_loss, seg_loss, total_loss};
pub use trainer::{
    build_patch_dataset, metrics_to_csv, train, train_resumed, EpochMetrics, PatchDataset,
    TrainOutcome, TrainSample,
};
