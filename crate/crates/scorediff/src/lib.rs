//! Variance-exploding score-based diffusion for 2D log-permeability fields:
//! noise schedule, a small convolutional score network with hand-written
//! gradients, denoising score-matching training, and ODE, predictor-corrector
//! and hard-data posterior samplers.

pub mod error;
pub mod model;
pub mod network;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use model::{Backend, NormStats, ScoreModel};
pub use network::{Network, NetworkSpec};
pub use sampler::{
    diagnostics, generate_ensemble, integrate_ode, sample_em, sample_many, sample_ode, sample_pc,
    sample_posterior, tweedie, DiffusionSampler, Guidance, HardData, PosteriorSettings,
    SampleDiagnostics, SamplerConfig,
};
pub use schedule::{perturb, VESchedule};
pub use train::{
    dsm_loss, dsm_train, Checkpoint, EpochLoss, OptimizerKind, TrainConfig, TrainOutcome,
};
