//! Two-stage training: the new layers first with the backbone frozen, then
//! the whole network, each stage with Adam, early stopping and best-by-
//! validation checkpoint selection.

mod config;
mod early_stop;
mod log;
mod loss;
mod trainer;

pub use config::{LossWeights, Monitor, TargetLabel, TrainConfig, MIN_IMPROVEMENT};
pub use early_stop::EarlyStopping;
pub use log::{EpochRecord, TrainLog};
pub use loss::{compute_loss, loss_value, Targets};
pub use trainer::{
    evaluate, run_case, single_head_config, train_stage, CaseOutcome, Checkpoint, SelectionMetric, StageOutcome,
    ValStats,
};

use thiserror::Error;

use crate::architecture::ArchitectureError;
use crate::dataset::DatasetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("sample `{image_id}` has no `{label}` label")]
    MissingLabel { image_id: String, label: &'static str },
    #[error("training diverged (non-finite values) in stage {stage}, epoch {epoch}")]
    Diverged { stage: u8, epoch: usize },
    #[error(transparent)]
    Architecture(#[from] ArchitectureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainingError>;
