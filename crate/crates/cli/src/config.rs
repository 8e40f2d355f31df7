//! Experiment configuration, read from a TOML file.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! See `configs/default.toml` for the full list with comments.

use std::path::{Path, PathBuf};

use actscale_core::diffusion::{DiffusionSchedule, SamplerConfig};
use actscale_core::guidance::GuidanceConfig;
use actscale_core::tinydenoiser::TrainConfig;
use actscale_core::truncation::TruncationConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_episodes: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    /// 15-action segments per test episode; long rollouts use up to this many.
    pub test_segments: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_episodes: 2000, val_episodes: 100, test_episodes: 200, test_segments: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 100, beta_start: 1e-3, beta_end: 0.2 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> actscale_core::Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// One pass: reference frame plus 15 actions.
    #[default]
    Short,
    /// `long_passes` chained passes.
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds dataset generation (train = seed, val = seed + 1,
    /// test = seed + 2) and evaluation noise streams.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Mean training action norm; computed from the train split when unset.
    pub mu_act: Option<f64>,
    pub rollout: RolloutMode,
    pub long_passes: usize,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    /// Parameters of the guided variants; `mode` is set per variant.
    pub guidance: GuidanceConfig,
    /// Parameters of the truncated variants; `mode` is set per variant.
    pub truncation: TruncationConfig,
    pub sampler: SamplerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            workers: 1,
            checkpoint: None,
            mu_act: None,
            rollout: RolloutMode::Short,
            long_passes: 3,
            dataset: DatasetConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            guidance: GuidanceConfig::default(),
            truncation: TruncationConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        let d = &self.dataset;
        if d.train_episodes == 0 || d.val_episodes == 0 || d.test_episodes == 0 || d.test_segments == 0 {
            return bad("dataset sizes and test_segments must be >= 1".into());
        }
        if self.rollout == RolloutMode::Long && !(1..=d.test_segments).contains(&self.long_passes) {
            return bad(format!(
                "long_passes = {} must lie in 1..={} (dataset.test_segments)",
                self.long_passes, d.test_segments
            ));
        }
        if let Some(mu) = self.mu_act {
            if !(mu.is_finite() && mu >= 0.0) {
                return bad(format!("mu_act must be >= 0, got {mu}"));
            }
        }
        self.schedule.build().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.guidance.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut trunc = self.truncation;
        trunc.mu_act = self.mu_act.unwrap_or(0.0);
        trunc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn passes(&self) -> usize {
        match self.rollout {
            RolloutMode::Short => 1,
            RolloutMode::Long => self.long_passes,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn split_path(&self, split: Split) -> PathBuf {
        self.out_dir.join(format!("{}.bin", split.name()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use actscale_core::guidance::Parameterization;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn shipped_default_matches_code() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig { mu_act: Some(1.25), ..Default::default() };
        cfg.guidance.parameterization = Parameterization::NegativeAnchor;
        cfg.rollout = RolloutMode::Long;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_override() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 7\n[guidance]\nlambda = 2.0\n[sampler]\nkind = \"ancestral\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.guidance.lambda, 2.0);
        assert_eq!(cfg.guidance.active_fraction, 0.5);
        assert_eq!(cfg.sampler.clip_x0, Some(3.0));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("workers = 0").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("[truncation]\ntau_min = 2.0").is_err());
        assert!(ExperimentConfig::from_toml("rollout = \"long\"\nlong_passes = 9").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nsteps = 1").is_err());
    }
}
