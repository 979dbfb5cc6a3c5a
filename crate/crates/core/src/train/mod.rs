//! Initialization, optimization, the training loop and evaluation metrics.

mod adam;
mod config;
mod eval;
mod init;
mod metrics;
mod trainer;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use config::{default_batch_size, lr_schedule, Loss, TrainConfig, TRAIN_KEYS};
pub use eval::{evaluate, evaluate_bicubic, prepare_scene, score_views, MetricReport, SceneScores, ViewScore};
pub use init::{xavier_bound, xavier_init};
pub use metrics::{mse, psnr, ssim, PSNR_CAP, SSIM_WINDOW};
pub use trainer::{
    batch_gradient, checkpoint_name, extract_patches, loss_csv, sample_gradient, train, train_patches, write_loss_csv,
    LossRecord, TrainOutcome, LAST_GOOD,
};
