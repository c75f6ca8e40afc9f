//! Run configuration, model wiring, the training loop and checkpoints.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TensorEntry, CHECKPOINT_VERSION};
pub use config::{ConfigError, DebugConfig, ModelConfig, RunConfig, Task, TrainConfig, Variant};
pub use model::{Dataset, ForwardOutput, ForwardRng, Head, Inference, Model, TaskData};
pub use train::{evaluate, link_records, restore, train, EpochRecord, EvalReport, TrainOutcome};

use thiserror::Error;

use crate::decoders::DecoderError;
use crate::encoders::EncoderError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::sfm::SfmError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Sfm(#[from] SfmError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config/dataset mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged at epoch {epoch}: non-finite value")]
    Divergence {
        epoch: usize,
        /// Parameters from the end of the previous epoch.
        checkpoint: Box<Checkpoint>,
        log: Vec<EpochRecord>,
    },
}

impl TrainError {
    /// Whether the error comes from a NaN or infinite value.
    pub fn is_non_finite(&self) -> bool {
        fn tensor(e: &TensorError) -> bool {
            matches!(e, TensorError::NonFinite { .. })
        }
        fn decoder(e: &DecoderError) -> bool {
            matches!(e, DecoderError::Tensor(t) if tensor(t))
        }
        match self {
            TrainError::Tensor(e) => tensor(e),
            TrainError::Encoder(EncoderError::Tensor(e)) => tensor(e),
            TrainError::Decoder(e) => decoder(e),
            TrainError::Sfm(SfmError::Tensor(e)) => tensor(e),
            TrainError::Sfm(SfmError::Decoder(e)) => decoder(e),
            TrainError::Divergence { .. } => true,
            _ => false,
        }
    }
}
