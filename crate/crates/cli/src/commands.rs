//! One function per CLI subcommand. Each reads its inputs from the config's
//! output directory and writes its outputs there.

use std::path::{Path, PathBuf};
use std::time::Instant;

use actscale_core::tinydenoiser::{load_checkpoint, save_checkpoint, train_with};
use actscale_core::toyworld::{
    generate_episodes, load_dataset, save_dataset, Episode, SEGMENT_LEN,
};
use actscale_core::truncation::empirical_mean_action_norm;
use actscale_core::{Frame, TinyDenoiser};

use crate::checks::{self, CheckResult};
use crate::config::{ExperimentConfig, Split};
use crate::experiment::{
    ablation_variants, evaluate_episodes, evaluation_variants, generate, summarize, ExperimentReport, Variant,
};
use crate::pgm;
use crate::{HarnessError, Result};

fn require(path: &Path, hint: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingInput { path: path.display().to_string(), hint })
    }
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Episode>> {
    let path = cfg.split_path(split);
    require(&path, "gen-dataset")?;
    Ok(load_dataset(&path)?)
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<TinyDenoiser> {
    let path = cfg.checkpoint_path();
    require(&path, "train")?;
    let model = load_checkpoint(&path)?;
    if model.alpha_bars() != cfg.schedule.build()?.alpha_bars() {
        return Err(HarnessError::Config(format!(
            "checkpoint was trained with a different schedule ({} steps) than the config ({} steps)",
            model.total_steps(),
            cfg.schedule.steps
        )));
    }
    Ok(model)
}

/// `mu_act` from the config, or the mean action norm of the train split.
pub fn resolve_mu_act(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.mu_act {
        Some(mu) => Ok(mu),
        None => {
            let train = load_split(cfg, Split::Train)?;
            Ok(empirical_mean_action_norm(train.iter().flat_map(|e| &e.actions))?)
        }
    }
}

/// Generates the train, val and test splits. Train and val episodes hold
/// one 15-action segment; test episodes hold `dataset.test_segments`.
pub fn cmd_gen_dataset(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let d = &cfg.dataset;
    let mut written = Vec::new();
    for (split, n, segments) in [
        (Split::Train, d.train_episodes, 1),
        (Split::Val, d.val_episodes, 1),
        (Split::Test, d.test_episodes, d.test_segments),
    ] {
        let episodes = generate_episodes(n, cfg.seed + split.seed_offset(), segments)?;
        let path = cfg.split_path(split);
        save_dataset(&path, &episodes)?;
        written.push(path);
    }
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_clock_secs: f64,
}

/// Trains on the train split; writes the checkpoint and `loss.csv`.
/// `progress(step, loss)` is called after every update.
pub fn cmd_train<F: FnMut(usize, f64)>(cfg: &ExperimentConfig, progress: F) -> Result<TrainSummary> {
    let train = load_split(cfg, Split::Train)?;
    let sched = cfg.schedule.build()?;
    let start = Instant::now();
    let outcome = train_with(&train, &sched, &cfg.train, progress)?;
    let wall_clock_secs = start.elapsed().as_secs_f64();
    let checkpoint = cfg.checkpoint_path();
    if let Some(dir) = checkpoint.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.denoiser, &checkpoint)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("loss.csv")).map_err(|e| HarnessError::Report(e.to_string()))?;
    w.write_record(["step", "loss"]).map_err(|e| HarnessError::Report(e.to_string()))?;
    for (step, loss) in outcome.losses.iter().enumerate() {
        w.write_record([step.to_string(), loss.to_string()])
            .map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    w.flush()?;
    Ok(TrainSummary {
        checkpoint,
        steps: outcome.losses.len(),
        initial_loss: outcome.losses[0],
        final_loss: *outcome.losses.last().expect("at least one step"),
        wall_clock_secs,
    })
}

fn run_grid(cfg: &ExperimentConfig, command: &str, grid: fn(&ExperimentConfig, f64) -> Vec<Variant>) -> Result<ExperimentReport> {
    let start = Instant::now();
    let model = load_model(cfg)?;
    let test = load_split(cfg, Split::Test)?;
    let mu_act = resolve_mu_act(cfg)?;
    let sched = cfg.schedule.build()?;
    let variants = grid(cfg, mu_act);
    let passes = cfg.passes();
    let rows = evaluate_episodes(&model, &sched, &test, &variants, passes, cfg.seed, cfg.workers)?;
    let summaries = summarize(&rows, &variants);
    let report = ExperimentReport {
        command: command.to_string(),
        config: cfg.clone(),
        mu_act,
        passes,
        frames_per_episode: passes * SEGMENT_LEN,
        variants,
        summaries,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        rows,
    };
    report.write(&cfg.out_dir, command)?;
    Ok(report)
}

/// Baseline, action-scaled CFG, and CFG with action-scaled truncation over
/// the test split. Writes `evaluate.csv` and `evaluate.json`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_grid(cfg, "evaluate", evaluation_variants)
}

/// The fixed/action-scaled guidance × truncation grid. Writes `ablate.csv`
/// and `ablate.json`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_grid(cfg, "ablate", ablation_variants)
}

/// Runs the verification suite. Needs no inputs; `mu_act` falls back to 0
/// when neither the config nor a train split provides it.
pub fn cmd_oracle_check(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let mu_act = resolve_mu_act(cfg).unwrap_or(0.0);
    let sched = cfg.schedule.build()?;
    Ok(checks::run_all(&sched, mu_act, cfg.seed)?)
}

/// Writes `frames/episode_<id>.pgm` for each id: the ground-truth strip on
/// top, then one strip per evaluation variant in grid order. Every strip
/// starts with the reference frame.
pub fn cmd_dump_frames(cfg: &ExperimentConfig, episode_ids: &[u64]) -> Result<Vec<PathBuf>> {
    let model = load_model(cfg)?;
    let test = load_split(cfg, Split::Test)?;
    let mu_act = resolve_mu_act(cfg)?;
    let sched = cfg.schedule.build()?;
    let variants = evaluation_variants(cfg, mu_act);
    let n = cfg.passes() * SEGMENT_LEN;
    let dir = cfg.out_dir.join("frames");
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for &id in episode_ids {
        let ep = test
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| HarnessError::Config(format!("test split has no episode {id}")))?;
        let mut strips: Vec<Vec<Frame>> = vec![ep.frames[..=n.min(ep.len() - 1)].to_vec()];
        for v in &variants {
            let r = generate(&model, &sched, std::slice::from_ref(ep), v, cfg.passes(), cfg.seed)?.remove(0);
            strips.push(std::iter::once(ep.frames[0].clone()).chain(r.frames).collect());
        }
        let rows: Vec<Vec<&Frame>> = strips.iter().map(|s| s.iter().collect()).collect();
        let path = dir.join(format!("episode_{id}.pgm"));
        pgm::write_grid(&path, &rows)?;
        written.push(path);
    }
    let legend: Vec<String> = std::iter::once("ground truth".to_string())
        .chain(variants.iter().map(|v| v.name.clone()))
        .collect();
    std::fs::write(dir.join("rows.txt"), legend.join("\n") + "\n")?;
    Ok(written)
}
