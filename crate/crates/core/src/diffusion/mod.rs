//! Conditional DDPM: noise schedule, forward process, training objective,
//! ancestral sampling and the trainable noise predictor.

pub mod checkpoint;
pub mod network;
pub mod objective;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{Denoiser, DenoiserSpec, NoisePredictor};
pub use objective::{
    forward_noise, loss_and_gradient, loss_and_gradient_with_draws, loss_with_draws, mse_loss,
    reconstruct_x0, LossAndGradient, LossTerms, NoiseDraw, TrainingPair,
};
pub use sampler::{ancestral_update, denoise_step, sample};
pub use schedule::{DiffusionSchedule, ScheduleConfig};
pub use train::{train, AdamState, OptimizerConfig, TrainReport};
