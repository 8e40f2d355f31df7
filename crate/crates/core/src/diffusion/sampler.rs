use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Condition, Denoiser, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::guidance::{guidance_weight, guided_epsilon_into, GuidanceConfig};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// DDPM posterior update with `σ_t² = β̃_t`.
    Ancestral,
    /// DDIM update with `η = 0`.
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Clamp the predicted clean latent to `[-c, c]` at every step.
    pub clip_x0: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { kind: SamplerKind::Deterministic, clip_x0: Some(3.0) }
    }
}

impl SamplerConfig {
    pub fn deterministic() -> Self {
        Self::default()
    }

    pub fn ancestral() -> Self {
        Self { kind: SamplerKind::Ancestral, ..Self::default() }
    }

    pub fn without_clip(mut self) -> Self {
        self.clip_x0 = None;
        self
    }
}

/// Result of sampling a batch of independent chains.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub latents: Array2<f64>,
    /// First step at which a chain went non-finite. Failed rows are zeroed.
    pub failures: Vec<Option<usize>>,
    /// Denoiser evaluations spent on each chain.
    pub evaluations: Vec<u64>,
}

/// Runs the reverse process for a single chain from `z0`.
#[allow(clippy::too_many_arguments)]
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Condition,
    z0: &[f64],
    sched: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let z = Array2::from_shape_vec((1, z0.len()), z0.to_vec())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let out = sample_batch(
        denoiser,
        std::slice::from_ref(cond),
        z,
        sched,
        guidance,
        sampler,
        std::slice::from_mut(rng),
    )?;
    if let Some(step) = out.failures[0] {
        return Err(Error::NumericalFailure { step });
    }
    Ok(out.latents.into_raw_vec_and_offset().0)
}

/// Runs the reverse process `t = T, …, 1` for every row of `z0`.
///
/// Each step evaluates the denoiser once per chain on the positive condition
/// and, for chains whose guidance weight is positive, once more on the
/// negated action. `rngs` supplies the per-chain ancestral noise and is
/// ignored by the deterministic sampler.
pub fn sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    conds: &[Condition],
    z0: Array2<f64>,
    sched: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    rngs: &mut [SeededRng],
) -> Result<BatchSample> {
    let (rows, dim) = z0.dim();
    if conds.len() != rows {
        return Err(Error::LengthMismatch { expected: rows, actual: conds.len() });
    }
    if dim != denoiser.latent_dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent has {dim} entries, denoiser expects {}",
            denoiser.latent_dim()
        )));
    }
    if sampler.kind == SamplerKind::Ancestral && rngs.len() != rows {
        return Err(Error::LengthMismatch { expected: rows, actual: rngs.len() });
    }
    guidance.validate()?;

    let total = sched.steps();
    let pos_conds: Vec<&Condition> = conds.iter().collect();
    let neg_conds: Vec<Condition> = conds.iter().map(Condition::negated).collect();
    let mut x = z0;
    let mut failures = vec![None; rows];
    let mut evaluations = vec![0u64; rows];
    let mut omegas = vec![0.0; rows];
    let mut combined = vec![0.0; dim];

    for t in (1..=total).rev() {
        let mut eps = denoiser.predict_batch(x.view(), t, &pos_conds)?;
        for e in evaluations.iter_mut() {
            *e += 1;
        }

        for (w, c) in omegas.iter_mut().zip(conds) {
            *w = guidance_weight(&c.action, t, total, guidance)?;
        }
        let guided: Vec<usize> = (0..rows)
            .filter(|&i| omegas[i] > 0.0 && failures[i].is_none())
            .collect();
        if !guided.is_empty() {
            let xg = x.select(Axis(0), &guided);
            let gconds: Vec<&Condition> = guided.iter().map(|&i| &neg_conds[i]).collect();
            let eps_neg = denoiser.predict_batch(xg.view(), t, &gconds)?;
            for (k, &i) in guided.iter().enumerate() {
                evaluations[i] += 1;
                let pos = eps.row(i);
                guided_epsilon_into(
                    pos.as_slice().expect("row-major"),
                    eps_neg.row(k).as_slice().expect("row-major"),
                    omegas[i],
                    guidance.parameterization,
                    &mut combined,
                );
                eps.row_mut(i).as_slice_mut().expect("row-major").copy_from_slice(&combined);
            }
        }

        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let beta = sched.beta(t);
        let (sqrt_ab, sqrt_1m_ab) = (ab.sqrt(), (1.0 - ab).sqrt());
        for i in 0..rows {
            if failures[i].is_some() {
                continue;
            }
            let mut row = x.row_mut(i);
            let xr = row.as_slice_mut().expect("row-major");
            let er = eps.row(i);
            let er = er.as_slice().expect("row-major");
            let noise_scale = match sampler.kind {
                SamplerKind::Ancestral if t > 1 => ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt(),
                _ => 0.0,
            };
            for (xv, &e) in xr.iter_mut().zip(er) {
                let mut x0 = (*xv - sqrt_1m_ab * e) / sqrt_ab;
                if let Some(c) = sampler.clip_x0 {
                    x0 = x0.clamp(-c, c);
                }
                *xv = match sampler.kind {
                    SamplerKind::Deterministic => {
                        let e_adj = (*xv - sqrt_ab * x0) / sqrt_1m_ab;
                        ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e_adj
                    }
                    SamplerKind::Ancestral => {
                        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                        let ct = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                        let mut next = c0 * x0 + ct * *xv;
                        if noise_scale > 0.0 {
                            let z: f64 = rngs[i].sample(StandardNormal);
                            next += noise_scale * z;
                        }
                        next
                    }
                };
            }
            if xr.iter().any(|v| !v.is_finite()) {
                failures[i] = Some(t);
                xr.fill(0.0);
            }
        }
    }

    Ok(BatchSample { latents: x, failures, evaluations })
}
