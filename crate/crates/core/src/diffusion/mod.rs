//! Noise schedules, forward noising and reverse sampling.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{Condition, CountingDenoiser, Denoiser};
pub use sampler::{sample, sample_batch, BatchSample, SamplerConfig, SamplerKind};
pub use schedule::{forward_noise, DiffusionSchedule};
