//! Action vectors and action-scaled classifier-free guidance.
//!
//! The negative condition is the negated action `-a` rather than a learned
//! unconditional token. The guidance weight scales with `‖a‖₂` and is only
//! active during the noisier part of sampling.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// A conditioning action. In the toy world this is a 2-D displacement in
/// pixels per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("action must have dim >= 1".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite action entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        action_norm(self)
    }

    pub fn negate(&self) -> Self {
        negate_action(self)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<&[f64]> for ActionVector {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }
}

/// Euclidean norm `‖a‖₂`.
pub fn action_norm(a: &ActionVector) -> f64 {
    a.0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn negate_action(a: &ActionVector) -> ActionVector {
    ActionVector(a.0.iter().map(|v| -v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    #[default]
    Off,
    /// `ω = λ‖a‖₂` while `t > T·active_fraction`, zero afterwards.
    ActionScaled,
    /// Constant `ω` at every step.
    Fixed,
}

/// How the positive and negative predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `ε(a) + ω·(ε(a) − ε(−a))`.
    #[default]
    ConditionalAnchor,
    /// `ε(−a) + ω·(ε(a) − ε(−a))`; `ω = 1` recovers the conditional prediction.
    NegativeAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub lambda: f64,
    pub fixed_omega: f64,
    pub parameterization: Parameterization,
    pub active_fraction: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Off,
            lambda: 1.0,
            fixed_omega: 1.0,
            parameterization: Parameterization::ConditionalAnchor,
            active_fraction: 0.5,
        }
    }
}

impl GuidanceConfig {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn action_scaled(lambda: f64) -> Self {
        Self {
            mode: GuidanceMode::ActionScaled,
            lambda,
            ..Self::default()
        }
    }

    pub fn fixed(omega: f64) -> Self {
        Self {
            mode: GuidanceMode::Fixed,
            fixed_omega: omega,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.fixed_omega.is_finite() && self.fixed_omega >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "fixed_omega must be >= 0, got {}",
                self.fixed_omega
            )));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "active_fraction must lie in (0, 1], got {}",
                self.active_fraction
            )));
        }
        Ok(())
    }
}

/// Guidance weight at noise level `t` of `total` (`t = total` is the first,
/// noisiest sampling step).
pub fn guidance_weight(a: &ActionVector, t: usize, total: usize, cfg: &GuidanceConfig) -> Result<f64> {
    if t == 0 || t > total {
        return Err(Error::StepOutOfRange { step: t, total });
    }
    cfg.validate()?;
    Ok(match cfg.mode {
        GuidanceMode::Off => 0.0,
        GuidanceMode::Fixed => cfg.fixed_omega,
        GuidanceMode::ActionScaled => {
            if (t as f64) > total as f64 * cfg.active_fraction {
                cfg.lambda * action_norm(a)
            } else {
                0.0
            }
        }
    })
}

/// Combines positive- and negative-action noise predictions.
pub fn guided_epsilon(
    eps_pos: &[f64],
    eps_neg: &[f64],
    omega: f64,
    parameterization: Parameterization,
) -> Result<Vec<f64>> {
    ensure_len(eps_pos.len(), eps_neg.len())?;
    if !omega.is_finite() {
        return Err(Error::InvalidInput(format!("omega must be finite, got {omega}")));
    }
    let mut out = vec![0.0; eps_pos.len()];
    guided_epsilon_into(eps_pos, eps_neg, omega, parameterization, &mut out);
    Ok(out)
}

pub(crate) fn guided_epsilon_into(
    eps_pos: &[f64],
    eps_neg: &[f64],
    omega: f64,
    parameterization: Parameterization,
    out: &mut [f64],
) {
    for ((o, &p), &n) in out.iter_mut().zip(eps_pos).zip(eps_neg) {
        *o = match parameterization {
            Parameterization::ConditionalAnchor => p + omega * (p - n),
            Parameterization::NegativeAnchor => n + omega * (p - n),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn av(v: &[f64]) -> ActionVector {
        ActionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(action_norm(&av(&[3.0, 4.0])), 5.0);
        assert_eq!(action_norm(&av(&[0.0, 0.0])), 0.0);
        // mpmath: sqrt(2) = 1.41421356237309504880...
        assert!((action_norm(&av(&[1.0, 1.0])) - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(ActionVector::new(vec![f64::NAN, 0.0]).is_err());
        assert!(ActionVector::new(vec![f64::INFINITY]).is_err());
        assert!(ActionVector::new(vec![]).is_err());
    }

    #[test]
    fn negate_examples() {
        assert_eq!(negate_action(&av(&[1.0, -2.0])), av(&[-1.0, 2.0]));
        assert_eq!(negate_action(&av(&[0.0, 0.0])).values(), &[0.0, 0.0]);
        assert_eq!(negate_action(&av(&[0.5, 0.5])), av(&[-0.5, -0.5]));
    }

    #[test]
    fn weight_examples() {
        let cfg = GuidanceConfig::action_scaled(1.0);
        let a = av(&[2.0, 0.0]);
        assert_eq!(guidance_weight(&a, 80, 100, &cfg).unwrap(), 2.0);
        assert_eq!(guidance_weight(&a, 30, 100, &cfg).unwrap(), 0.0);
        assert_eq!(guidance_weight(&a, 50, 100, &cfg).unwrap(), 0.0);
        assert_eq!(guidance_weight(&a, 51, 100, &cfg).unwrap(), 2.0);
        for lambda in [0.0, 1.0, 7.5] {
            let cfg = GuidanceConfig::action_scaled(lambda);
            assert_eq!(guidance_weight(&av(&[0.0, 0.0]), 99, 100, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn weight_modes() {
        let a = av(&[2.0, 0.0]);
        assert_eq!(guidance_weight(&a, 99, 100, &GuidanceConfig::off()).unwrap(), 0.0);
        let fixed = GuidanceConfig::fixed(3.0);
        assert_eq!(guidance_weight(&a, 1, 100, &fixed).unwrap(), 3.0);
        assert_eq!(guidance_weight(&a, 100, 100, &fixed).unwrap(), 3.0);
    }

    #[test]
    fn weight_step_out_of_range() {
        let cfg = GuidanceConfig::action_scaled(1.0);
        let a = av(&[1.0, 0.0]);
        assert!(matches!(
            guidance_weight(&a, 0, 100, &cfg),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(guidance_weight(&a, 101, 100, &cfg).is_err());
    }

    #[test]
    fn invalid_config() {
        let mut cfg = GuidanceConfig::action_scaled(1.0);
        cfg.active_fraction = 0.0;
        assert!(cfg.validate().is_err());
        cfg.active_fraction = 0.5;
        cfg.lambda = -1.0;
        assert!(guidance_weight(&av(&[1.0]), 60, 100, &cfg).is_err());
    }

    #[test]
    fn guided_examples() {
        let v = [0.3, -1.2, 4.0];
        for p in [Parameterization::ConditionalAnchor, Parameterization::NegativeAnchor] {
            assert_eq!(guided_epsilon(&v, &v, 2.5, p).unwrap(), v.to_vec());
        }
        let out = guided_epsilon(&[1.0, 0.0], &[-1.0, 0.0], 0.5, Parameterization::ConditionalAnchor)
            .unwrap();
        assert_eq!(out, vec![2.0, 0.0]);
        let pos = [0.1, 0.2];
        let out = guided_epsilon(&pos, &[9.0, -9.0], 0.0, Parameterization::ConditionalAnchor)
            .unwrap();
        assert_eq!(out, pos.to_vec());
    }

    #[test]
    fn guided_length_mismatch() {
        assert!(matches!(
            guided_epsilon(&[1.0], &[1.0, 2.0], 1.0, Parameterization::ConditionalAnchor),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn double_negation((a, _) in vecs(3)) {
            let a = ActionVector::new(a).unwrap();
            prop_assert_eq!(negate_action(&negate_action(&a)), a);
        }

        #[test]
        fn anchors_agree_with_shifted_weight((p, n) in vecs(6), omega in 0.0..5.0f64) {
            let c = guided_epsilon(&p, &n, omega, Parameterization::ConditionalAnchor).unwrap();
            let g = guided_epsilon(&p, &n, omega + 1.0, Parameterization::NegativeAnchor).unwrap();
            for (x, y) in c.iter().zip(&g) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn guided_is_affine((p1, n1) in vecs(5), (p2, n2) in vecs(5), s in -2.0..2.0f64, omega in 0.0..4.0f64) {
            for param in [Parameterization::ConditionalAnchor, Parameterization::NegativeAnchor] {
                let mix = |u: &[f64], v: &[f64]| -> Vec<f64> {
                    u.iter().zip(v).map(|(x, y)| s * x + (1.0 - s) * y).collect()
                };
                let lhs = guided_epsilon(&mix(&p1, &p2), &mix(&n1, &n2), omega, param).unwrap();
                let g1 = guided_epsilon(&p1, &n1, omega, param).unwrap();
                let g2 = guided_epsilon(&p2, &n2, omega, param).unwrap();
                for ((l, a), b) in lhs.iter().zip(&g1).zip(&g2) {
                    prop_assert!((l - (s * a + (1.0 - s) * b)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn weight_monotone_in_norm(r1 in 0.0..10.0f64, r2 in 0.0..10.0f64, theta in 0.0..std::f64::consts::TAU, t in 51usize..=100) {
            let cfg = GuidanceConfig::action_scaled(1.0);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a_lo = ActionVector::new(vec![lo * theta.cos(), lo * theta.sin()]).unwrap();
            let a_hi = ActionVector::new(vec![hi * theta.sin(), hi * theta.cos()]).unwrap();
            let w_lo = guidance_weight(&a_lo, t, 100, &cfg).unwrap();
            let w_hi = guidance_weight(&a_hi, t, 100, &cfg).unwrap();
            prop_assert!(w_lo <= w_hi + 1e-12);
        }
    }
}
