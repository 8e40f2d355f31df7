//! Frame-by-frame autoregressive generation.
//!
//! Every predicted frame is sampled by diffusion conditioned on the previous
//! frame (the reference for the first step, predictions afterwards) and the
//! current action. Actions are consumed in passes of 15; under the default
//! norm source each pass gets its own truncation limit from the mean norm of
//! its actions. A single pass is the short-trajectory protocol; several
//! chained passes are the long-trajectory protocol.

use ndarray::Array2;

use super::{Episode, Frame, FRAME_PIXELS, SEGMENT_LEN};
use crate::diffusion::{sample_batch, Condition, Denoiser, DiffusionSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::guidance::{action_norm, ActionVector, GuidanceConfig};
use crate::truncation::{init_latent_for_norm, NormSource, TruncationConfig};
use crate::{stream_rng, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RolloutControls {
    pub guidance: GuidanceConfig,
    pub truncation: TruncationConfig,
    pub sampler: SamplerConfig,
}

impl RolloutControls {
    pub fn baseline() -> Self {
        Self::default()
    }
}

/// One trajectory to generate. `id` selects the noise streams.
#[derive(Debug, Clone, Copy)]
pub struct RolloutRequest<'a> {
    pub id: u64,
    pub reference: &'a Frame,
    pub actions: &'a [ActionVector],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Predicted frames, one per action.
    pub frames: Vec<Frame>,
    pub evaluations: u64,
    /// `(frame index, diffusion step)` of the first numerical failure.
    pub failure: Option<(usize, usize)>,
}

fn pass_norms(actions: &[ActionVector], source: NormSource) -> Vec<f64> {
    match source {
        NormSource::PerStep => actions.iter().map(action_norm).collect(),
        NormSource::EpisodeMean => actions
            .chunks(SEGMENT_LEN)
            .flat_map(|seg| {
                let mean = seg.iter().map(action_norm).sum::<f64>() / seg.len() as f64;
                std::iter::repeat_n(mean, seg.len())
            })
            .collect(),
    }
}

/// Generates all requests in lockstep, batching denoiser calls across them.
/// Every request must carry the same number of actions.
pub fn rollout_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    sched: &DiffusionSchedule,
    requests: &[RolloutRequest<'_>],
    controls: &RolloutControls,
    run_seed: u64,
) -> Result<Vec<Rollout>> {
    let Some(first) = requests.first() else {
        return Ok(Vec::new());
    };
    let steps = first.actions.len();
    if steps == 0 || requests.iter().any(|r| r.actions.len() != steps) {
        return Err(Error::InvalidInput("rollout requests need equal, nonzero action counts".into()));
    }
    if denoiser.latent_dim() != FRAME_PIXELS {
        return Err(Error::ShapeMismatch(format!(
            "denoiser latent has {} entries, frames have {FRAME_PIXELS}",
            denoiser.latent_dim()
        )));
    }
    let norms: Vec<Vec<f64>> = requests
        .iter()
        .map(|r| pass_norms(r.actions, controls.truncation.norm_source))
        .collect();

    let mut prev: Vec<Frame> = requests.iter().map(|r| r.reference.clone()).collect();
    let mut out: Vec<Rollout> = requests
        .iter()
        .map(|_| Rollout { frames: Vec::with_capacity(steps), evaluations: 0, failure: None })
        .collect();

    for k in 0..steps {
        let mut rngs: Vec<SeededRng> = Vec::with_capacity(requests.len());
        let mut z0 = Array2::zeros((requests.len(), FRAME_PIXELS));
        for (i, (req, req_norms)) in requests.iter().zip(&norms).enumerate() {
            let mut rng = stream_rng(run_seed, req.id, k as u64);
            let z = init_latent_for_norm(req_norms[k], FRAME_PIXELS, &controls.truncation, &mut rng)?;
            z0.row_mut(i).iter_mut().zip(z).for_each(|(d, v)| *d = v);
            rngs.push(rng);
        }
        let conds: Vec<Condition> = requests
            .iter()
            .zip(&prev)
            .map(|(req, f)| Condition::new(f.to_latent(), req.actions[k].clone()))
            .collect();
        let res = sample_batch(
            denoiser,
            &conds,
            z0,
            sched,
            &controls.guidance,
            &controls.sampler,
            &mut rngs,
        )?;
        for (i, row) in res.latents.rows().into_iter().enumerate() {
            let frame = Frame::from_latent(row.as_slice().expect("row-major"))?;
            let r = &mut out[i];
            r.evaluations += res.evaluations[i];
            if let (None, Some(step)) = (r.failure, res.failures[i]) {
                r.failure = Some((k, step));
            }
            r.frames.push(frame.clone());
            prev[i] = frame;
        }
    }
    Ok(out)
}

/// Short-trajectory protocol: ground-truth first frame plus 15 actions.
pub fn rollout_short<D: Denoiser + ?Sized>(
    denoiser: &D,
    sched: &DiffusionSchedule,
    episode: &Episode,
    controls: &RolloutControls,
    run_seed: u64,
) -> Result<Rollout> {
    rollout_long(denoiser, sched, episode, 1, controls, run_seed)
}

/// Long-trajectory protocol over `passes` chained 15-action segments. Only
/// the episode's first frame and actions are read.
pub fn rollout_long<D: Denoiser + ?Sized>(
    denoiser: &D,
    sched: &DiffusionSchedule,
    episode: &Episode,
    passes: usize,
    controls: &RolloutControls,
    run_seed: u64,
) -> Result<Rollout> {
    let n = passes * SEGMENT_LEN;
    if passes == 0 || episode.actions.len() < n {
        return Err(Error::InvalidInput(format!(
            "episode {} has {} actions, {passes} passes need {n}",
            episode.id,
            episode.actions.len()
        )));
    }
    let req = RolloutRequest { id: episode.id, reference: &episode.frames[0], actions: &episode.actions[..n] };
    let mut res = rollout_batch(denoiser, sched, &[req], controls, run_seed)?;
    Ok(res.remove(0))
}
