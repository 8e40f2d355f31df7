//! Verification suite run by `oracle-check`: the closed-form Gaussian world,
//! the truncated-normal sampler and the truncation schedule.

use actscale_core::diffusion::{sample, SamplerConfig};
use actscale_core::oracle::{exact_epsilon, guided_equals_amplified_check};
use actscale_core::truncation::{sample_truncated_normal, truncated_normal_variance, truncation_limit_for_norm};
use actscale_core::{
    ActionVector, Condition, DiffusionSchedule, GaussianOracle, GaussianWorld, GuidanceConfig, SeededRng,
    TruncationConfig,
};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn random_action(rng: &mut SeededRng) -> ActionVector {
    ActionVector::new(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).expect("finite")
}

fn random_point(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `guided(ε*(a), ε*(−a), ω) = ε*((1 + 2ω)a)` on random probes.
pub fn guidance_identity(sched: &DiffusionSchedule, probes: usize, seed: u64) -> actscale_core::Result<CheckResult> {
    let world = GaussianWorld::reference();
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut passed = true;
    for _ in 0..probes {
        let x = random_point(&mut rng, world.out_dim());
        let t = rng.random_range(1..=sched.steps());
        let a = random_action(&mut rng);
        let omega = rng.random_range(0.0..5.0);
        let c = guided_equals_amplified_check(&x, t, &a, omega, &world, sched)?;
        passed &= c.passed;
        worst = worst.max(c.residual);
    }
    Ok(CheckResult::new("guidance identity", passed, format!("{probes} probes, max residual {worst:.3e}")))
}

/// `ε* = −√(1 − ᾱ_t) · ∇ log p(x_t | a)`, with the score from central
/// differences of the analytic log-density.
pub fn score_consistency(sched: &DiffusionSchedule, probes: usize, seed: u64) -> actscale_core::Result<CheckResult> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-5;
    let world = GaussianWorld::reference();
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = random_point(&mut rng, world.out_dim());
        let t = rng.random_range(1..=sched.steps());
        let a = random_action(&mut rng);
        let (mean, var) = world.marginal(t, &a, sched)?;
        let log_p = |y: &[f64]| -> f64 {
            y.iter().zip(&mean).map(|(v, m)| -0.5 * (v - m).powi(2) / var).sum::<f64>()
                - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
        };
        let eps = exact_epsilon(&x, t, &a, &world, sched)?;
        let k = (1.0 - sched.alpha_bar(t)).sqrt();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..x.len() {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += H;
            down[i] -= H;
            let fd = -k * (log_p(&up) - log_p(&down)) / (2.0 * H);
            num = num.max((fd - eps[i]).abs());
            den = den.max(eps[i].abs());
        }
        worst = worst.max(num / den.max(f64::MIN_POSITIVE));
    }
    Ok(CheckResult::new(
        "oracle score",
        worst <= TOL,
        format!("{probes} probes, max relative error {worst:.3e}"),
    ))
}

/// Bound, mean and variance of `n` truncated-normal draws, with the moment
/// checks at three standard errors.
pub fn truncated_moments(tau: f64, n: usize, seed: u64) -> actscale_core::Result<CheckResult> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let z = sample_truncated_normal(tau, n, &mut rng)?;
    let nf = n as f64;
    let max_abs = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = z.iter().sum::<f64>() / nf;
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / nf;
    let m4 = z.iter().map(|v| v.powi(4)).sum::<f64>() / nf;
    let var = m2 - mean * mean;
    let target = truncated_normal_variance(tau);
    let se_mean = (var / nf).sqrt();
    let se_var = ((m4 - m2 * m2) / nf).sqrt();
    let passed = max_abs <= tau && mean.abs() <= 3.0 * se_mean && (var - target).abs() <= 3.0 * se_var;
    Ok(CheckResult::new(
        format!("truncated normal tau={tau}"),
        passed,
        format!(
            "max|z| {max_abs:.6}, mean {mean:.2e} (3SE {:.2e}), var {var:.6} vs {target:.6} (3SE {:.2e})",
            3.0 * se_mean,
            3.0 * se_var
        ),
    ))
}

/// τ(μ_act) = 1, strict monotonicity and the open `(τ_min, τ_max)` range
/// over random norms.
pub fn tau_schedule(mu_act: f64, samples: usize, seed: u64) -> actscale_core::Result<CheckResult> {
    let cfg = TruncationConfig::action_scaled(mu_act);
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut norms: Vec<f64> = (0..samples).map(|_| rng.random_range(0.0..(mu_act + 6.0))).collect();
    norms.sort_by(f64::total_cmp);
    norms.dedup();
    let taus: Vec<f64> = norms
        .iter()
        .map(|&n| truncation_limit_for_norm(n, &cfg))
        .collect::<actscale_core::Result<_>>()?;
    let centre = truncation_limit_for_norm(mu_act, &cfg)?;
    let increasing = taus.windows(2).all(|w| w[0] < w[1]);
    let bounded = taus.iter().all(|&t| t > cfg.tau_min && t < cfg.tau_max);
    Ok(CheckResult::new(
        "tau schedule",
        (centre - 1.0).abs() <= 1e-15 && increasing && bounded,
        format!(
            "tau(mu_act) {centre}, {} norms, increasing {increasing}, bounded {bounded}",
            norms.len()
        ),
    ))
}

/// With a near-deterministic world, guided sampling lands on `W·(1 + 2ω)a`
/// and unguided sampling on `W·a`.
pub fn sampler_recovery(sched: &DiffusionSchedule, seed: u64) -> actscale_core::Result<CheckResult> {
    let world = GaussianWorld::reference().with_sigma0(1e-4)?;
    let oracle = GaussianOracle::new(world.clone(), sched.clone());
    let mut rng = SeededRng::seed_from_u64(seed);
    let a = ActionVector::new(vec![0.7, -0.4])?;
    let z0 = random_point(&mut rng, world.out_dim());
    let cond = Condition::action_only(a.clone());
    let sampler = SamplerConfig::deterministic().without_clip();
    let out = sample(&oracle, &cond, &z0, sched, &GuidanceConfig::off(), &sampler, &mut rng)?;
    let want = world.mean(&a)?;
    let err_plain = out.iter().zip(&want).map(|(o, w)| (o - w).abs()).fold(0.0, f64::max);
    let omega = 1.5;
    let guided = sample(&oracle, &cond, &z0, sched, &GuidanceConfig::fixed(omega), &sampler, &mut rng)?;
    let want_g = world.mean(&a.scaled(1.0 + 2.0 * omega))?;
    let err_guided = guided.iter().zip(&want_g).map(|(o, w)| (o - w).abs()).fold(0.0, f64::max);
    Ok(CheckResult::new(
        "sampler recovery",
        err_plain <= 1e-3 && err_guided <= 1e-3,
        format!("max error unguided {err_plain:.2e}, fixed omega={omega} {err_guided:.2e}"),
    ))
}

/// Everything `oracle-check` runs.
pub fn run_all(sched: &DiffusionSchedule, mu_act: f64, seed: u64) -> actscale_core::Result<Vec<CheckResult>> {
    let mut out = vec![
        guidance_identity(sched, 1000, seed)?,
        score_consistency(sched, 100, seed ^ 1)?,
    ];
    for (i, tau) in [0.5, 1.0, 1.5].into_iter().enumerate() {
        out.push(truncated_moments(tau, 1_000_000, seed ^ (2 + i as u64))?);
    }
    out.push(tau_schedule(mu_act, 10_000, seed ^ 5)?);
    out.push(sampler_recovery(sched, seed ^ 6)?);
    Ok(out)
}
