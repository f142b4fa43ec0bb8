//! Sliding-window datasets, chronological splits, losses, Adam and the
//! training loop.

mod adam;
mod data;
mod loss;
mod train;

pub use adam::{adam_step, AdamState};
pub use data::{
    batch_iter, make_windows, make_windows_from, normalize, split_dataset, Affine, NormParams, SplitSpec,
    Splits, WindowDataset, WindowRule,
};
pub use loss::{mae_loss, mse_loss, LossKind};
pub use train::{
    attach_norm, dataset_loss, fit, predict_dataset, read_norm, reconstruct, reconstruct_series, run_training,
    Hyperparams, Reconstruction, TrainingOutcome, TrainingReport,
};
