use actscale_core::diffusion::DiffusionSchedule;
use actscale_core::tinydenoiser::{sample_training_batch, transitions, MlpParams, LAYER_DIMS};
use actscale_core::toyworld::generate_dataset;
use actscale_core::SeededRng;
use rand::{Rng, SeedableRng};

/// Worst per-coordinate relative error between the analytic gradient and
/// central differences over `probes` random parameters of every layer.
fn gradient_check(params: &MlpParams, probes: usize, seed: u64) -> f64 {
    let sched = DiffusionSchedule::linear(100, 1e-3, 0.2).unwrap();
    let data = transitions(&generate_dataset(8, 21).unwrap());
    let mut rng = SeededRng::seed_from_u64(seed);
    let (input, target, weights) = sample_training_batch(&data, &sched, 8, 5.0, &mut rng);
    let (_, grads) = params.loss_and_grad(input.view(), target.view(), weights.view());

    let loss_at = |p: &MlpParams| {
        let out = p.forward(input.view());
        let mut total = 0.0;
        for r in 0..out.nrows() {
            for c in 0..out.ncols() {
                total += weights[r] * (out[[r, c]] - target[[r, c]]).powi(2);
            }
        }
        total / out.len() as f64
    };
    let h = 2e-3;
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for layer in &params.layers {
        let size = layer.w.len() + layer.b.len();
        for _ in 0..probes {
            let i = offset + rng.random_range(0..size);
            let x = params.get(i);
            let central = |h: f64| {
                let mut p = params.clone();
                p.set(i, x + h);
                let up = loss_at(&p);
                p.set(i, x - h);
                let down = loss_at(&p);
                (up - down) / (2.0 * h)
            };
            // Richardson step: O(h⁴) truncation with little cancellation.
            let numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            let analytic = grads.get(i);
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        offset += size;
    }
    worst
}

#[test]
fn training_gradient_matches_finite_differences() {
    let params = MlpParams::init(&LAYER_DIMS, 5).unwrap();
    let err = gradient_check(&params, 40, 6);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn bias_gradients_checked_on_perturbed_network() {
    // Non-zero biases exercise the bias path through SiLU.
    let mut params = MlpParams::init(&LAYER_DIMS, 8).unwrap();
    let mut rng = SeededRng::seed_from_u64(1);
    for l in &mut params.layers {
        l.b.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let err = gradient_check(&params, 30, 2);
    assert!(err <= 1e-4, "relative error {err}");
}
