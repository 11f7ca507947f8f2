//! Training, evaluation, checkpoints, learning curves, and the comparison
//! matrix.

pub mod checkpoint;
pub mod curve;
pub mod matrix;
pub mod metrics;
pub mod trainer;

pub use checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use curve::{CurveRow, LearningCurve};
pub use matrix::{grid_configs, run_matrix, MatrixOptions, MatrixReport};
pub use metrics::{f1_from_pr, fmt_metric, MetricsReport, PredictionRecord};
pub use trainer::{evaluate_model, train, video_probability, EvalOptions, TrainOptions, TrainOutcome};
