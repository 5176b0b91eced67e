//! Self-supervised optimisation of the encoder and network against a sinogram.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod train;

pub use adam::{adam_step, Moments, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{EncoderKind, LearningRates, ParamGroup, TrainConfig};
pub use loss::{compute_loss, compute_loss_and_grads, Encoding, Gradients, Model};
pub(crate) use train::init_model;
pub use train::{train, train_with_observer, ReconstructionResult, TrainError};
