//! Consistency BiGAN anomaly scorer for byteplot images, built on a small
//! reverse-mode autodiff engine.

pub mod ablation;
pub mod autograd;
pub mod cbigan;
pub mod checkpoint;
pub mod dataset;
pub mod nn;
pub mod optim;
pub mod run;
pub mod tensor;
pub mod train;

pub use cbigan::{CBiGan, LossBreakdown, ParamSet, ScoreConfig};
pub use checkpoint::{Checkpoint, CheckpointKind, EvalMetrics};
pub use nn::{Backbone, ModelConfig};
pub use train::{train, LabeledInput, TrainConfig, TrainLogRecord, TrainOutcome};
pub use tensor::{Real, Tensor};

use hilbyte_core::corpus::CorpusError;
use hilbyte_core::imgcode::ImageError;
use hilbyte_core::metrics::MetricsError;

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training split contains a malicious sample: {0}")]
    MaliciousInTrain(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
