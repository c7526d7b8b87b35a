//! Noise-conditioned denoisers: preconditioning, noise schedules, the
//! training objective, trained network checkpoints and analytic oracles.

mod checkpoint;
mod edm;
mod net;
mod oracle;
mod train;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use edm::{karras_schedule, precondition, EdmConfig, Precond, SigmaSchedule};
pub use net::{draw_training_noise, loss_and_grad, training_loss, DenoiserNet, NetDenoiser};
pub use oracle::{CountingDenoiser, Denoiser, GaussianMixtureOracle, MixtureComponent};
pub use train::{dataset_std, smooth, train, train_with_progress, TrainConfig, TrainOutcome};
