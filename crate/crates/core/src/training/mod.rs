//! Losses, optimiser and the joint training loop.

mod config;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use config::{LossNorm, TrainConfig};
pub use loss::{dt3_loss, unified_loss, unified_loss_value};
pub use metrics::{EpochRecord, GradProbe, MetricsLog, UpdateRecord};
pub use optim::{adamw_step, clip_grad_norm, global_grad_norm, AdamHyper, AdamW};
pub use trainer::{
    compute_losses, policy_spec, sample_batch, train, Batch, LossTerms, RngState, TrainOutcome,
    TrainState, Trainer,
};

use std::path::Path;

use crate::diffusion::DiffusionError;
use crate::dt3::Dt3Error;
use crate::envdata::EnvDataError;
use crate::numerics::NumericsError;
use crate::policy::PolicyError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dt3(#[from] Dt3Error),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    EnvData(#[from] EnvDataError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
