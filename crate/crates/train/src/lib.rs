//! Losses, optimizer, balanced sampling, the two-stage training loop, and
//! evaluation / interpretability tooling.

pub mod config;
pub mod evalx;
pub mod loss;
pub mod optim;
pub mod runtime;
pub mod sampler;
pub mod stage;

pub use config::{Stage, TrainConfig};
pub use loss::Loss;
pub use runtime::{Model, Predictions};
pub use stage::{history_csv, run_stage, split_indices, EpochStats, Init, Split, StageOutput};

use sourcenet_nn::checkpoint::CheckpointError;
use sourcenet_nn::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (events {events:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        events: Vec<String>,
    },
    #[error("{0}")]
    Index(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<sourcenet_nn::GraphError> for TrainError {
    fn from(e: sourcenet_nn::GraphError) -> Self {
        TrainError::Model(e.into())
    }
}
