//! Conditional denoising diffusion over actions, conditioned on a coarse
//! action and the diffusion step.

mod approximator;
mod loss;
mod sampler;
mod schedule;

pub use approximator::{
    sinusoidal_embedding, NoiseApproxConfig, NoiseApproxVariant, NoiseApproximator,
};
pub use loss::diffusion_loss;
pub use sampler::{
    denoise_from_prediction, denoise_step, sample_action, ModelPredictor, NoisePredictor,
    ReverseStep, ReverseStepTrace, SamplerOptions,
};
pub use schedule::{forward_noise, DiffusionSchedule};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("diffusion step {step} outside 1..={n_steps}")]
    StepOutOfRange { step: usize, n_steps: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
