//! Training-free inference-time controls for action-conditioned diffusion:
//! guidance against the negated action with a weight proportional to the
//! action norm, and action-dependent truncation of the initial latent.
//!
//! The crate also carries the machinery needed to exercise them end to end:
//! a DDPM/DDIM sampler, a closed-form Gaussian oracle denoiser, a toy
//! point-mass pixel world, a small MLP denoiser and frame quality metrics.

pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod oracle;
pub mod tinydenoiser;
pub mod toyworld;
pub mod truncation;

use rand::SeedableRng;

pub use diffusion::{Condition, Denoiser, DiffusionSchedule, SamplerConfig, SamplerKind};
pub use error::{Error, Result};
pub use guidance::{ActionVector, GuidanceConfig, GuidanceMode, Parameterization};
pub use oracle::{GaussianOracle, GaussianWorld};
pub use tinydenoiser::{TinyDenoiser, TrainConfig};
pub use toyworld::{Episode, Frame, RolloutControls};
pub use truncation::{NormSource, TruncationConfig, TruncationMode};

/// The generator used for every random draw in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Generator for one `(episode, frame)` noise stream under `run_seed`.
/// Independent of the method variant so variants can share noise.
pub fn stream_rng(run_seed: u64, episode: u64, frame: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(run_seed);
    rng.set_stream((episode << 20) ^ frame);
    rng
}
