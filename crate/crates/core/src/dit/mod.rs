//! Diffusion transformer velocity network for box-trajectory tokens.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ConditionDropout, Direction, DitConfig};
pub use model::{drop_condition, Conditioning, Dit, Stream};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("unknown conditioning stream `{0}`")]
    UnknownStream(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
