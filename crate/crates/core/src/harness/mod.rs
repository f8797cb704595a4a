//! Metrics, model persistence, training and end-to-end evaluation.

pub mod metrics;
mod model;
mod pipeline;
mod train;

pub use metrics::{accurate_rate, edit_counts, word_accuracy, EditCounts};
pub use model::Model;
pub use pipeline::{
    evaluate, run_pipeline, DecoderConfig, EvalCounts, EvalReport, LineResult, PipelineConfig,
};
pub use train::{train_model, EpochStats, NetProfile, TrainConfig, Trainer};
