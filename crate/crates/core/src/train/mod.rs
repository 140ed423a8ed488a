//! Training: loss, reverse pass through the unrolled pipeline, optimizer,
//! gradient checks and the sampling loop.

mod adam;
mod backward;
mod gradcheck;
mod trainer;
mod loss;

use thiserror::Error;

use crate::pipeline::PipelineError;

pub use adam::{Adam, AdamConfig};
pub use backward::{backward, loss_and_grad};
pub use gradcheck::{gradcheck, random_instance, relative_error, GradcheckConfig, GradcheckReport, ToyInstance, REL_ERROR_FLOOR};
pub use trainer::{sample_offset, train_loop, LabeledObject, TrainConfig, TrainReport, TrainingSequence};
pub use loss::{cell_loss, wbce_loss, wbce_loss_grad, GroundTruth, LossConfig, LossNormalization, CLAMP_EPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(&'static str),
    #[error("identity {id} appears twice in one frame")]
    DuplicateId { id: u64 },
    #[error("dataset has no usable frame pairs")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("parameters became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}
