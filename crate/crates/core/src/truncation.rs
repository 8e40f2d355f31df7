//! Action-scaled truncation of the initial diffusion latent.
//!
//! The truncation limit follows a sigmoid of the action norm centred at the
//! training-set mean norm `μ_act`:
//!
//! ```text
//! τ(a) = τ_min + (τ_max − τ_min) · sigmoid(‖a‖₂ − μ_act)
//! ```
//!
//! Latent entries are then drawn independently from `N(0, 1)` conditioned on
//! `|z| ≤ τ(a)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{action_norm, ActionVector};

/// Consecutive rejections allowed for a single entry before giving up.
pub const REJECTION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    #[default]
    Off,
    ActionScaled,
    Fixed,
}

/// Which action norm feeds the sigmoid schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    /// Mean step norm over the actions of the clip being generated.
    #[default]
    EpisodeMean,
    /// Norm of the action conditioning the current frame.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationConfig {
    pub mode: TruncationMode,
    pub tau_min: f64,
    pub tau_max: f64,
    pub mu_act: f64,
    pub fixed_tau: f64,
    pub norm_source: NormSource,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            mode: TruncationMode::Off,
            tau_min: 0.5,
            tau_max: 1.5,
            mu_act: 0.0,
            fixed_tau: 1.0,
            norm_source: NormSource::EpisodeMean,
        }
    }
}

impl TruncationConfig {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn action_scaled(mu_act: f64) -> Self {
        Self {
            mode: TruncationMode::ActionScaled,
            mu_act,
            ..Self::default()
        }
    }

    pub fn fixed(tau: f64) -> Self {
        Self {
            mode: TruncationMode::Fixed,
            fixed_tau: tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max && self.tau_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "need 0 < tau_min <= tau_max, got ({}, {})",
                self.tau_min, self.tau_max
            )));
        }
        if !(self.mu_act.is_finite() && self.mu_act >= 0.0) {
            return Err(Error::InvalidInput(format!("mu_act must be >= 0, got {}", self.mu_act)));
        }
        if self.fixed_tau.is_nan() || self.fixed_tau <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "fixed_tau must be > 0, got {}",
                self.fixed_tau
            )));
        }
        Ok(())
    }
}

/// Logistic function, using the `exp(x) / (1 + exp(x))` branch for negative
/// arguments so large negative inputs do not overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Truncation limit for a given action norm. Returns `+∞` when truncation is
/// off.
pub fn truncation_limit_for_norm(norm: f64, cfg: &TruncationConfig) -> Result<f64> {
    cfg.validate()?;
    if !(norm.is_finite() && norm >= 0.0) {
        return Err(Error::InvalidInput(format!("action norm must be finite and >= 0, got {norm}")));
    }
    Ok(match cfg.mode {
        TruncationMode::Off => f64::INFINITY,
        TruncationMode::Fixed => cfg.fixed_tau,
        TruncationMode::ActionScaled => {
            cfg.tau_min + (cfg.tau_max - cfg.tau_min) * sigmoid(norm - cfg.mu_act)
        }
    })
}

pub fn truncation_limit(a: &ActionVector, cfg: &TruncationConfig) -> Result<f64> {
    truncation_limit_for_norm(action_norm(a), cfg)
}

/// Draws `n` independent samples of `N(0, 1)` conditioned on `|z| ≤ tau` by
/// rejection. `tau = +∞` yields plain standard normals.
pub fn sample_truncated_normal<R: Rng + ?Sized>(tau: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    fill_truncated_normal(tau, &mut out, rng)?;
    Ok(out)
}

pub fn fill_truncated_normal<R: Rng + ?Sized>(tau: f64, out: &mut [f64], rng: &mut R) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!("tau must be > 0, got {tau}")));
    }
    for slot in out.iter_mut() {
        let mut tries = 0u64;
        *slot = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= tau {
                break z;
            }
            tries += 1;
            if tries >= REJECTION_CAP {
                return Err(Error::RejectionStall { tau, cap: REJECTION_CAP });
            }
        };
    }
    Ok(())
}

/// Closed-form variance of the standard normal truncated to `[-tau, tau]`:
/// `1 − 2τφ(τ) / (2Φ(τ) − 1)`.
pub fn truncated_normal_variance(tau: f64) -> f64 {
    if tau.is_infinite() {
        return 1.0;
    }
    let pdf = (-0.5 * tau * tau).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = libm::erf(tau / std::f64::consts::SQRT_2);
    1.0 - 2.0 * tau * pdf / mass
}

/// Arithmetic mean of `‖aᵢ‖₂`, used as `μ_act`.
pub fn empirical_mean_action_norm<'a, I>(actions: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ActionVector>,
{
    let (sum, count) = actions
        .into_iter()
        .fold((0.0, 0usize), |(s, c), a| (s + action_norm(a), c + 1));
    if count == 0 {
        return Err(Error::InvalidInput("cannot average an empty action list".into()));
    }
    Ok(sum / count as f64)
}

/// Initial latent of length `dim` for the given action.
pub fn init_latent<R: Rng + ?Sized>(
    a: &ActionVector,
    dim: usize,
    cfg: &TruncationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    init_latent_for_norm(action_norm(a), dim, cfg, rng)
}

pub fn init_latent_for_norm<R: Rng + ?Sized>(
    norm: f64,
    dim: usize,
    cfg: &TruncationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidInput("latent dimension must be >= 1".into()));
    }
    let tau = truncation_limit_for_norm(norm, cfg)?;
    sample_truncated_normal(tau, dim, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn av(v: &[f64]) -> ActionVector {
        ActionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn limit_examples() {
        let cfg = TruncationConfig::action_scaled(5.0);
        assert!((truncation_limit(&av(&[3.0, 4.0]), &cfg).unwrap() - 1.0).abs() < 1e-15);
        let big = truncation_limit_for_norm(1e6, &cfg).unwrap();
        assert!((big - 1.5).abs() < 1e-12);
        // mpmath: 0.5 + 1/(1 + e^2) = 0.619202922022117555...
        let cfg = TruncationConfig::action_scaled(2.0);
        let tau = truncation_limit(&av(&[0.0, 0.0]), &cfg).unwrap();
        assert!((tau - 0.619_202_922_022_117_6).abs() < 1e-15);
    }

    #[test]
    fn limit_modes() {
        let a = av(&[1.0, 2.0]);
        assert_eq!(truncation_limit(&a, &TruncationConfig::fixed(1.25)).unwrap(), 1.25);
        assert!(truncation_limit(&a, &TruncationConfig::off()).unwrap().is_infinite());
        let mut bad = TruncationConfig::action_scaled(1.0);
        bad.tau_min = 2.0;
        assert!(truncation_limit(&a, &bad).is_err());
        bad.tau_min = 0.0;
        assert!(truncation_limit(&a, &bad).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(-2.0) + sigmoid(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_variance() {
        // mpmath values of 1 - 2τφ(τ)/(2Φ(τ)-1).
        let cases = [
            (0.5, 0.080_589_154_600_811_7),
            (1.0, 0.291_125_094_772_793_2),
            (1.5, 0.551_524_415_761_551_3),
        ];
        for (tau, expected) in cases {
            let got = truncated_normal_variance(tau);
            assert!((got - expected).abs() < 1e-12, "tau={tau} got {got:e}");
        }
        assert_eq!(truncated_normal_variance(f64::INFINITY), 1.0);
    }

    #[test]
    fn hard_bound_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = sample_truncated_normal(1.0, 1_000_000, &mut rng).unwrap();
        assert!(z.iter().all(|v| v.abs() <= 1.0));
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var - 0.291_16).abs() < 0.005, "var={var}");

        let z = sample_truncated_normal(8.0, 1_000_000, &mut rng).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "var={var}");
    }

    #[test]
    fn sampler_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_truncated_normal(0.0, 4, &mut rng).is_err());
        assert!(sample_truncated_normal(-1.0, 4, &mut rng).is_err());
        assert!(sample_truncated_normal(f64::NAN, 4, &mut rng).is_err());
        assert!(matches!(
            sample_truncated_normal(1e-9, 1, &mut rng),
            Err(Error::RejectionStall { .. })
        ));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = sample_truncated_normal(0.7, 1000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_truncated_normal(0.7, 1000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_norm_examples() {
        assert_eq!(empirical_mean_action_norm(&[av(&[3.0, 4.0])]).unwrap(), 5.0);
        assert_eq!(
            empirical_mean_action_norm(&[av(&[1.0, 0.0]), av(&[0.0, -3.0])]).unwrap(),
            2.0
        );
        assert!(empirical_mean_action_norm(&[]).is_err());
    }

    #[test]
    fn init_latent_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let off = init_latent(&av(&[0.0, 0.0]), 200_000, &TruncationConfig::off(), &mut rng).unwrap();
        assert!(off.iter().any(|v| v.abs() > 3.0));
        let var = off.iter().map(|v| v * v).sum::<f64>() / off.len() as f64;
        assert!((var - 1.0).abs() < 0.02);

        let cfg = TruncationConfig::action_scaled(2.0);
        let small = init_latent(&av(&[0.0, 0.0]), 10_000, &cfg, &mut rng).unwrap();
        let tau_small = truncation_limit(&av(&[0.0, 0.0]), &cfg).unwrap();
        assert!(tau_small < 0.62);
        assert!(small.iter().all(|v| v.abs() <= tau_small));

        let large = init_latent(&av(&[30.0, 0.0]), 10_000, &cfg, &mut rng).unwrap();
        let tau_large = truncation_limit(&av(&[30.0, 0.0]), &cfg).unwrap();
        assert!(tau_large > 1.49);
        assert!(large.iter().all(|v| v.abs() <= tau_large));
        assert!(large.iter().any(|v| v.abs() > 1.0));
        assert!(init_latent(&av(&[0.0]), 0, &cfg, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn limit_increasing_and_bounded(n1 in 0.0..20.0f64, n2 in 0.0..20.0f64, mu in 0.0..5.0f64) {
            let cfg = TruncationConfig::action_scaled(mu);
            let t1 = truncation_limit_for_norm(n1, &cfg).unwrap();
            let t2 = truncation_limit_for_norm(n2, &cfg).unwrap();
            prop_assert!(t1 > 0.5 && t1 < 1.5);
            if n1 < n2 {
                prop_assert!(t1 <= t2);
            }
        }
    }
}
