//! Network variants, parameter accounting, forward evaluation and
//! checkpoint files.

mod checkpoint;
mod forward;
mod params;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, MANIFEST_FILE, PARAMS_DIR};
pub use forward::{backbone_features, forward, forward_on_tape, ForwardOutput, Inputs, TapeForward};
pub use params::{build, ModelParams};
pub use spec::{
    bias_name, count_trainable_params, freeze_mask, kernel_name, Activation, FreezeGroup, LayerKind, LayerSpec,
    ModelVariant, NetworkSpec, ParamSpec, Scale, ATTRIBUTE_INPUT, IMAGE_INPUT,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ArchitectureError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("training stage must be 1 or 2, got {0}")]
    InvalidStage(u8),
    #[error("bad network input: {0}")]
    Input(String),
    #[error("parameters do not match the network: {0}")]
    ParamMismatch(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ArchitectureError>;
