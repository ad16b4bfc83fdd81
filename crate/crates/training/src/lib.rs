//! Dataset manifests and splits, the two-stage training driver, checkpoints
//! and test-split evaluation.
//!
//! Stage one ([`Stage::Pretrain`]) feeds the network ground truth projected
//! onto the LED bands; stage two ([`Stage::Main`]) mixes projected and raw
//! camera inputs in every batch.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod evaluate;
pub mod manifest;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{AugmentConfig, Stage, TrainConfig};
pub use data::{epoch_batches, Batch, BatchBuilder, BatchItem, Dataset, Provenance, Sample};
pub use error::{Result, TrainError};
pub use evaluate::{evaluate, evaluate_pair, evaluate_with, EvalReport, MetricMeans, SampleMetrics};
pub use manifest::{default_test_count, split_dataset, DatasetManifest, SampleRecord, Split};
pub use train::{predict_cube, save_final, train_stage, EpochRecord, RunOptions, TrainState};
