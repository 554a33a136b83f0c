//! A small trainable transducer with hand-derived gradients and the
//! synthetic corpus it learns from.

mod checkpoint;
mod grad;
mod network;
mod params;
mod task;
mod train;

use thiserror::Error;

use crate::decoder::DecodeError;
use crate::lattice::LatticeError;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, MAGIC, VERSION};
pub use grad::{
    batch_loss_and_gradient, loss_and_gradient, train_step, train_step_clipped, GRAD_CLIP_NORM,
};
pub use params::{Matrix, ModelDims, ModelParams, TENSOR_NAMES};
pub use task::{generate_corpus, SynthTaskConfig, Utterance};
pub use train::{exact_sequence_accuracy, train, TrainConfig, TrainSummary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("source has {frames} frames, fewer than the time reduction {time_reduction}")]
    SourceTooShort { frames: usize, time_reduction: usize },
    #[error("source symbol {0} is outside the source vocabulary")]
    SourceSymbolOutOfRange(usize),
    #[error("target token {0} is outside the target vocabulary")]
    TokenOutOfRange(usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite loss or gradient ({0})")]
    NonFiniteLoss(f64),
    #[error("invalid task configuration: {0}")]
    InvalidTask(&'static str),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}
