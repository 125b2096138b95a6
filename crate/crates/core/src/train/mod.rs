//! Losses, optimizer, metrics and the experiment harness.

pub mod adam;
pub mod experiment;
pub mod fit;
pub mod loss;
pub mod metrics;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use experiment::{
    evaluate, grid_for, prepare_cell, run_cell, run_experiment, run_experiment_with, split_indices, split_windows, Aggregate, CellData,
    CellWindows, CellLog, DatasetSource, ExperimentConfig, ExperimentReport,
    Evaluation, ReportRow,
};
pub use fit::{
    make_samples, pooled_latent, predict, sample_gradients, sample_loss, train, Prediction, Sample, SignalScale,
    Target, Task, TrainConfig, TrainLog,
};
pub use loss::{bce_pixels, cross_entropy, mse, LossKind};
pub use metrics::{macro_metrics, regression_metrics, ClassMetrics, RegressionMetrics};
