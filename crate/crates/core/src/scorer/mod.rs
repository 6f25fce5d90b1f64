//! Loss functions and a desk-scale multitask scorer.

pub mod losses;
pub mod toy;

pub use losses::{
    bin_weights, focal_loss, r2ccp_loss, weighted_bce_loss, weighted_mse_loss, ClassWeights, LossConfig,
};
pub use toy::{mean_losses, predict_toy, train_toy, RegMode, TaskLosses, ToyModelParams, TrainConfig, TrainSample};
