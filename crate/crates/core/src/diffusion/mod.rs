//! Conditional diffusion: schedules, the reverse update, transformer
//! denoisers, condition encoders, losses and samplers.

mod denoiser;
pub mod encoders;
mod schedule;

pub use denoiser::{
    sample, split_rows, training_loss, Conditions, Denoiser, DenoiserConfig, DenoiserSpec, Encoded, Guidance, Normalizer, Output, Role,
    SamplerKind, CHECKPOINT_KIND, GUIDED_STEPS,
};
pub use schedule::NoiseSchedule;
