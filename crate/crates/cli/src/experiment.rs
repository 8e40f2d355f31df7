//! Method variants, batched evaluation and report assembly.

use std::path::Path;

use actscale_core::diffusion::Denoiser;
use actscale_core::metrics;
use actscale_core::toyworld::{rollout_batch, Episode, Rollout, RolloutRequest, SEGMENT_LEN};
use actscale_core::{
    DiffusionSchedule, GuidanceConfig, GuidanceMode, RolloutControls, TruncationConfig, TruncationMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{HarnessError, Result};

/// Episodes generated together in one batched rollout. Fixed so results do
/// not depend on the worker count.
pub const CHUNK_EPISODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub id: usize,
    pub name: String,
    pub guidance: GuidanceConfig,
    pub truncation: TruncationConfig,
    #[serde(skip)]
    pub controls: RolloutControls,
}

impl Variant {
    fn new(id: usize, name: impl Into<String>, cfg: &ExperimentConfig, g: GuidanceConfig, t: TruncationConfig) -> Self {
        let controls = RolloutControls { guidance: g, truncation: t, sampler: cfg.sampler };
        Self { id, name: name.into(), guidance: g, truncation: t, controls }
    }
}

fn guidance_with(cfg: &ExperimentConfig, mode: GuidanceMode, fixed_omega: f64) -> GuidanceConfig {
    GuidanceConfig { mode, fixed_omega, ..cfg.guidance }
}

fn truncation_with(cfg: &ExperimentConfig, mu_act: f64, mode: TruncationMode, fixed_tau: f64) -> TruncationConfig {
    TruncationConfig { mode, fixed_tau, mu_act, ..cfg.truncation }
}

/// `baseline`, `cfg` (action-scaled guidance) and `cfg+trunc` (plus
/// action-scaled truncation).
pub fn evaluation_variants(cfg: &ExperimentConfig, mu_act: f64) -> Vec<Variant> {
    let off_g = guidance_with(cfg, GuidanceMode::Off, cfg.guidance.fixed_omega);
    let on_g = guidance_with(cfg, GuidanceMode::ActionScaled, cfg.guidance.fixed_omega);
    let off_t = truncation_with(cfg, mu_act, TruncationMode::Off, cfg.truncation.fixed_tau);
    let on_t = truncation_with(cfg, mu_act, TruncationMode::ActionScaled, cfg.truncation.fixed_tau);
    vec![
        Variant::new(0, "baseline", cfg, off_g, off_t),
        Variant::new(1, "cfg", cfg, on_g, off_t),
        Variant::new(2, "cfg+trunc", cfg, on_g, on_t),
    ]
}

/// `{ω = 1, ω = 3, action-scaled ω} × {τ = 1, τ = 1.5, action-scaled τ, off}`.
pub fn ablation_variants(cfg: &ExperimentConfig, mu_act: f64) -> Vec<Variant> {
    let omegas = [
        ("omega=1.0", GuidanceMode::Fixed, 1.0),
        ("omega=3.0", GuidanceMode::Fixed, 3.0),
        ("omega=action", GuidanceMode::ActionScaled, cfg.guidance.fixed_omega),
    ];
    let taus = [
        ("tau=1.0", TruncationMode::Fixed, 1.0),
        ("tau=1.5", TruncationMode::Fixed, 1.5),
        ("tau=action", TruncationMode::ActionScaled, cfg.truncation.fixed_tau),
        ("tau=off", TruncationMode::Off, cfg.truncation.fixed_tau),
    ];
    let mut out = Vec::new();
    for (gname, gmode, omega) in omegas {
        for (tname, tmode, tau) in taus {
            out.push(Variant::new(
                out.len(),
                format!("{gname}/{tname}"),
                cfg,
                guidance_with(cfg, gmode, omega),
                truncation_with(cfg, mu_act, tmode, tau),
            ));
        }
    }
    out
}

/// One CSV row: an episode under one variant. Metrics are NaN when the
/// rollout hit a numerical failure; `failure` then reads `frame=K step=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub variant_id: usize,
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
    pub latent_l2: f64,
    pub evaluations: u64,
    pub failure: String,
}

impl EpisodeRow {
    pub fn failed(&self) -> bool {
        !self.failure.is_empty()
    }
}

fn score(ep: &Episode, variant: &Variant, r: &Rollout) -> Result<EpisodeRow> {
    let gt = &ep.frames[1..=r.frames.len()];
    let (psnr, ssim, latent_l2, failure) = match r.failure {
        Some((frame, step)) => (f64::NAN, f64::NAN, f64::NAN, format!("frame={frame} step={step}")),
        None => {
            let n = r.frames.len() as f64;
            let mut p = 0.0;
            let mut s = 0.0;
            for (pred, g) in r.frames.iter().zip(gt) {
                p += metrics::psnr(pred, g)?;
                s += metrics::ssim(pred, g)?;
            }
            (p / n, s / n, metrics::latent_l2(&r.frames, gt)?, String::new())
        }
    };
    Ok(EpisodeRow {
        episode: ep.id,
        variant_id: variant.id,
        variant: variant.name.clone(),
        psnr,
        ssim,
        latent_l2,
        evaluations: r.evaluations,
        failure,
    })
}

fn check_lengths(episodes: &[Episode], passes: usize) -> Result<usize> {
    let n = passes * SEGMENT_LEN;
    if passes == 0 {
        return Err(HarnessError::Config("passes must be >= 1".into()));
    }
    if let Some(ep) = episodes.iter().find(|e| e.actions.len() < n) {
        return Err(HarnessError::Config(format!(
            "episode {} has {} actions, {passes} passes need {n}",
            ep.id,
            ep.actions.len()
        )));
    }
    Ok(n)
}

/// Rolls out `passes · 15` frames for each episode under one variant. Reads
/// only each episode's first frame and its actions.
pub fn generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    sched: &DiffusionSchedule,
    episodes: &[Episode],
    variant: &Variant,
    passes: usize,
    run_seed: u64,
) -> Result<Vec<Rollout>> {
    let n = check_lengths(episodes, passes)?;
    let requests: Vec<RolloutRequest<'_>> = episodes
        .iter()
        .map(|ep| RolloutRequest { id: ep.id, reference: &ep.frames[0], actions: &ep.actions[..n] })
        .collect();
    Ok(rollout_batch(denoiser, sched, &requests, &variant.controls, run_seed)?)
}

/// Rolls out every episode under every variant and scores the frames
/// against the episode's ground truth. Rows come back sorted by
/// `(episode, variant_id)`.
pub fn evaluate_episodes<D: Denoiser>(
    denoiser: &D,
    sched: &DiffusionSchedule,
    episodes: &[Episode],
    variants: &[Variant],
    passes: usize,
    run_seed: u64,
    workers: usize,
) -> Result<Vec<EpisodeRow>> {
    check_lengths(episodes, passes)?;
    let tasks: Vec<(&Variant, &[Episode])> = variants
        .iter()
        .flat_map(|v| episodes.chunks(CHUNK_EPISODES).map(move |c| (v, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let chunks: Vec<Vec<EpisodeRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(variant, chunk)| {
                let rollouts = generate(denoiser, sched, chunk, variant, passes, run_seed)?;
                chunk.iter().zip(&rollouts).map(|(ep, r)| score(ep, variant, r)).collect()
            })
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<EpisodeRow> = chunks.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.episode, r.variant_id));
    Ok(rows)
}

/// Aggregate over the non-failed rows of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant_id: usize,
    pub variant: String,
    pub episodes: usize,
    pub failed: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_latent_l2: f64,
    pub evaluations: u64,
}

/// Per-variant means, summed in row order.
pub fn summarize(rows: &[EpisodeRow], variants: &[Variant]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|v| {
            let mine: Vec<&EpisodeRow> = rows.iter().filter(|r| r.variant_id == v.id).collect();
            let ok: Vec<&&EpisodeRow> = mine.iter().filter(|r| !r.failed()).collect();
            let mean = |f: fn(&EpisodeRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            VariantSummary {
                variant_id: v.id,
                variant: v.name.clone(),
                episodes: mine.len(),
                failed: mine.len() - ok.len(),
                mean_psnr: mean(|r| r.psnr),
                mean_ssim: mean(|r| r.ssim),
                mean_latent_l2: mean(|r| r.latent_l2),
                evaluations: mine.iter().map(|r| r.evaluations).sum(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config: ExperimentConfig,
    pub mu_act: f64,
    pub passes: usize,
    pub frames_per_episode: usize,
    pub variants: Vec<Variant>,
    pub summaries: Vec<VariantSummary>,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub rows: Vec<EpisodeRow>,
}

impl ExperimentReport {
    pub fn summary(&self, name: &str) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == name)
    }

    /// Writes `<stem>.csv` (per-episode rows) and `<stem>.json` (everything
    /// else) into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join(format!("{stem}.csv")), &self.rows)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Report(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}

pub fn write_rows(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Report(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Report(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Report(e.to_string())))
        .collect()
}
