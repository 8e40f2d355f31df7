use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fill_input_row, MlpParams, TinyDenoiser, INPUT_DIM, LAYER_DIMS, OUTPUT_DIM};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::toyworld::{Episode, FRAME_PIXELS};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Min-SNR cap `γ`; `inf` gives the unweighted ε-prediction MSE.
    pub snr_gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            snr_gamma: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps > 0
            && self.batch_size > 0
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.snr_gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t);
    let bc2 = 1.0 - cfg.beta2.powi(state.t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    };
    for (((pl, gl), ml), vl) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        Zip::from(&mut pl.w).and(&gl.w).and(&mut ml.w).and(&mut vl.w).for_each(update);
        Zip::from(&mut pl.b).and(&gl.b).and(&mut ml.b).and(&mut vl.b).for_each(update);
    }
}

/// One training example source: previous-frame latent, target latent and
/// action.
#[derive(Debug, Clone)]
pub struct Transition {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
    pub action: Vec<f64>,
}

pub fn transitions(dataset: &[Episode]) -> Vec<Transition> {
    dataset
        .iter()
        .flat_map(|ep| {
            ep.actions.iter().enumerate().map(move |(k, a)| Transition {
                context: ep.frames[k].to_latent(),
                target: ep.frames[k + 1].to_latent(),
                action: a.values().to_vec(),
            })
        })
        .collect()
}

/// Per-step weight of `‖ε − ε̂‖²` in the training loss:
/// `min(SNR_t, γ) / SNR_t` with `SNR_t = ᾱ_t / (1 − ᾱ_t)`.
pub fn epsilon_loss_weight(alpha_bar: f64, snr_gamma: f64) -> f64 {
    let snr = alpha_bar / (1.0 - alpha_bar);
    snr.min(snr_gamma) / snr
}

/// Draws a mini-batch of the weighted ε-prediction objective: a random
/// transition, a uniform step `t` and Gaussian noise per row.
///
/// Returns `(input, target, weights)` with the clean latent as target and
/// `min(SNR_t, γ)` as row weight, so the row-weighted network loss equals
/// `mean epsilon_loss_weight(ᾱ_t, γ) · ‖ε − ε̂‖²`.
pub fn sample_training_batch<R: Rng + ?Sized>(
    data: &[Transition],
    sched: &DiffusionSchedule,
    batch: usize,
    snr_gamma: f64,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let total = sched.steps();
    let mut input = Array2::zeros((batch, INPUT_DIM));
    let mut target = Array2::zeros((batch, OUTPUT_DIM));
    let mut weights = Array1::zeros(batch);
    let mut x_t = vec![0.0; FRAME_PIXELS];
    for ((mut row, mut y), w) in input.rows_mut().into_iter().zip(target.rows_mut()).zip(weights.iter_mut()) {
        let tr = &data[rng.random_range(0..data.len())];
        let t = rng.random_range(1..=total);
        let ab = sched.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (x, x0) in x_t.iter_mut().zip(&tr.target) {
            let e: f64 = rng.sample(StandardNormal);
            *x = sa * x0 + sn * e;
        }
        y.as_slice_mut().expect("row-major").copy_from_slice(&tr.target);
        *w = (ab / (1.0 - ab)).min(snr_gamma);
        fill_input_row(row.as_slice_mut().expect("row-major"), &x_t, t, total, &tr.context, &tr.action);
    }
    (input, target, weights)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: TinyDenoiser,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Consecutive steps above `10 × initial loss` that count as divergence.
const DIVERGENCE_PATIENCE: usize = 100;

/// Trains the MLP on the ε-prediction MSE. Fully determined by `cfg.seed`.
pub fn train(dataset: &[Episode], sched: &DiffusionSchedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, sched, cfg, |_, _| {})
}

/// Like [`train`], calling `progress(step, loss)` after every update.
pub fn train_with<F: FnMut(usize, f64)>(
    dataset: &[Episode],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = transitions(dataset);
    if data.is_empty() {
        return Err(Error::InvalidInput("training set has no transitions".into()));
    }
    let mut params = MlpParams::init(&LAYER_DIMS, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut above = 0usize;
    for step in 0..cfg.steps {
        let (input, target, weights) = sample_training_batch(&data, sched, cfg.batch_size, cfg.snr_gamma, &mut rng);
        let (loss, grads) = params.loss_and_grad(input.view(), target.view(), weights.view());
        let initial = *losses.first().unwrap_or(&loss);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss, initial });
        }
        above = if loss > 10.0 * initial { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            return Err(Error::TrainingDiverged { step, loss, initial });
        }
        losses.push(loss);
        adam_step(&mut params, &grads, &mut adam, cfg);
        progress(step, loss);
    }
    if !params.is_finite() {
        return Err(Error::TrainingDiverged { step: cfg.steps, loss: f64::NAN, initial: losses[0] });
    }
    Ok(TrainOutcome { denoiser: TinyDenoiser::new(params, sched)?, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinydenoiser::epsilon_from_clean;
    use crate::toyworld::generate_dataset;

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::linear(100, 1e-3, 0.2).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = transitions(&generate_dataset(4, 1).unwrap());
        let mut params = MlpParams::init(&LAYER_DIMS, 2).unwrap();
        let before = params.clone();
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        let mut adam = AdamState::new(&params);
        let mut rng = SeededRng::seed_from_u64(0);
        for _ in 0..3 {
            let (x, y, w) = sample_training_batch(&data, &sched(), 8, 5.0, &mut rng);
            let (_, g) = params.loss_and_grad(x.view(), y.view(), w.view());
            adam_step(&mut params, &g, &mut adam, &cfg);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn weighted_target_equals_epsilon_error() {
        let mut rng = SeededRng::seed_from_u64(4);
        for &t in &[1, 30, 100] {
            let ab = sched().alpha_bar(t);
            for gamma in [5.0, f64::INFINITY] {
                let x0: f64 = rng.random_range(-1.0..1.0);
                let e: f64 = rng.sample(StandardNormal);
                let f: f64 = rng.random_range(-2.0..2.0);
                let x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * e;
                let eps_hat = epsilon_from_clean(x_t, f, ab);
                let row_weight = (ab / (1.0 - ab)).min(gamma);
                let lhs = epsilon_loss_weight(ab, gamma) * (e - eps_hat).powi(2);
                assert!((lhs - row_weight * (f - x0).powi(2)).abs() < 1e-9 * lhs.max(1.0));
            }
            assert_eq!(epsilon_loss_weight(ab, f64::INFINITY), 1.0);
        }
    }

    #[test]
    fn short_run_is_reproducible_and_learns() {
        let ds = generate_dataset(16, 3).unwrap();
        let cfg = TrainConfig { steps: 60, batch_size: 16, ..TrainConfig::default() };
        let a = train(&ds, &sched(), &cfg).unwrap();
        let b = train(&ds, &sched(), &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.denoiser, b.denoiser);
        let head: f64 = a.losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = a.losses[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn divergence_is_reported() {
        let ds = generate_dataset(4, 3).unwrap();
        let cfg = TrainConfig { steps: 400, batch_size: 4, learning_rate: 1e3, ..TrainConfig::default() };
        match train(&ds, &sched(), &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.losses.last().copied())),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let ds = generate_dataset(2, 3).unwrap();
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(&ds, &sched(), &cfg).is_err());
    }
}
