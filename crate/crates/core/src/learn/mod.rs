//! Losses, a small convolutional model, Adam and the noise2noise trainer.

pub mod adam;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use loss::{adaptive_mixed_loss, alpha_schedule, bmode_mse_loss, mse_loss, LossEval, LossKind};
pub use model::{Architecture, ToyModel};
pub use train::{train_noise2noise, write_history_csv, EpochRecord, TrainOutcome, TrainSpec};
