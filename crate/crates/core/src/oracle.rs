//! Closed-form denoiser for a linear-Gaussian world.
//!
//! Data are `x₀ | a ~ N(W·a, σ₀²·I)`. Under the forward process the noisy
//! marginal is `x_t | a ~ N(√ᾱ_t·W·a, (ᾱ_t·σ₀² + 1 − ᾱ_t)·I)`, and the
//! MSE-optimal noise prediction is `ε* = −√(1−ᾱ_t)·∇ log p(x_t | a)`:
//!
//! ```text
//! ε*(x_t, t, a) = √(1−ᾱ_t)·(x_t − √ᾱ_t·W·a) / (ᾱ_t·σ₀² + 1 − ᾱ_t)
//! ```
//!
//! Because `ε*` is affine in `a`, guidance with the negated action is exactly
//! equivalent to conditioning on the amplified action `(1 + 2ω)·a`.

use ndarray::{Array2, ArrayView2};

use crate::diffusion::{Condition, Denoiser, DiffusionSchedule};
use crate::error::{ensure_len, Error, Result};
use crate::guidance::{guided_epsilon, ActionVector, Parameterization};

/// Residual bound for the guidance identity in double precision.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWorld {
    /// `d_out × d_action` conditional mean map.
    w: Array2<f64>,
    sigma0: f64,
}

impl GaussianWorld {
    pub fn new(w: Array2<f64>, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma0 must be > 0, got {sigma0}")));
        }
        if w.iter().any(|v| !v.is_finite()) || w.is_empty() {
            return Err(Error::InvalidInput("W must be non-empty and finite".into()));
        }
        Ok(Self { w, sigma0 })
    }

    /// The default 4×2 test world: rows `[1, 0.5]`, `[-0.5, 2]` repeated,
    /// `σ₀ = 0.3`.
    pub fn reference() -> Self {
        let w = Array2::from_shape_vec(
            (4, 2),
            vec![1.0, 0.5, -0.5, 2.0, 1.0, 0.5, -0.5, 2.0],
        )
        .expect("static shape");
        Self { w, sigma0: 0.3 }
    }

    pub fn with_sigma0(&self, sigma0: f64) -> Result<Self> {
        Self::new(self.w.clone(), sigma0)
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// `W·a`.
    pub fn mean(&self, a: &ActionVector) -> Result<Vec<f64>> {
        ensure_len(self.action_dim(), a.dim())?;
        Ok(self
            .w
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(a.values()).map(|(w, v)| w * v).sum())
            .collect())
    }

    /// Mean and per-coordinate variance of `x_t | a`.
    pub fn marginal(&self, t: usize, a: &ActionVector, sched: &DiffusionSchedule) -> Result<(Vec<f64>, f64)> {
        sched.check_step(t)?;
        let ab = sched.alpha_bar(t);
        let mean = self.mean(a)?.into_iter().map(|m| ab.sqrt() * m).collect();
        Ok((mean, ab * self.sigma0 * self.sigma0 + 1.0 - ab))
    }
}

/// Exact noise prediction `ε*(x_t, t, a)` for `world`.
pub fn exact_epsilon(
    x_t: &[f64],
    t: usize,
    a: &ActionVector,
    world: &GaussianWorld,
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    ensure_len(world.out_dim(), x_t.len())?;
    let (mean, var) = world.marginal(t, a, sched)?;
    let k = (1.0 - sched.alpha_bar(t)).sqrt() / var;
    Ok(x_t.iter().zip(&mean).map(|(x, m)| k * (x - m)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub passed: bool,
    pub residual: f64,
}

/// Checks `guided(ε*(a), ε*(−a), ω) == ε*((1 + 2ω)·a)` in the
/// conditional-anchor parameterization.
pub fn guided_equals_amplified_check(
    x_t: &[f64],
    t: usize,
    a: &ActionVector,
    omega: f64,
    world: &GaussianWorld,
    sched: &DiffusionSchedule,
) -> Result<IdentityCheck> {
    let pos = exact_epsilon(x_t, t, a, world, sched)?;
    let neg = exact_epsilon(x_t, t, &a.negate(), world, sched)?;
    let guided = guided_epsilon(&pos, &neg, omega, Parameterization::ConditionalAnchor)?;
    let amplified = exact_epsilon(x_t, t, &a.scaled(1.0 + 2.0 * omega), world, sched)?;
    let residual = guided
        .iter()
        .zip(&amplified)
        .map(|(g, h)| (g - h).abs())
        .fold(0.0, f64::max);
    Ok(IdentityCheck { passed: residual <= IDENTITY_TOLERANCE, residual })
}

/// [`Denoiser`] backed by [`exact_epsilon`]. Ignores the frame context.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub world: GaussianWorld,
    pub schedule: DiffusionSchedule,
}

impl GaussianOracle {
    pub fn new(world: GaussianWorld, schedule: DiffusionSchedule) -> Self {
        Self { world, schedule }
    }
}

impl Denoiser for GaussianOracle {
    fn latent_dim(&self) -> usize {
        self.world.out_dim()
    }

    fn predict_batch(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>> {
        ensure_len(x_t.nrows(), conds.len())?;
        let mut out = Array2::zeros(x_t.raw_dim());
        for ((row, mut dst), cond) in x_t.rows().into_iter().zip(out.rows_mut()).zip(conds) {
            let row = row.to_vec();
            let eps = exact_epsilon(&row, t, &cond.action, &self.world, &self.schedule)?;
            dst.iter_mut().zip(eps).for_each(|(d, e)| *d = e);
        }
        Ok(out)
    }
}
