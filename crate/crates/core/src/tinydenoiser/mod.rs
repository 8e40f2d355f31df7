//! A small MLP noise predictor for the toy world with hand-written
//! backpropagation.
//!
//! Input layout (530 features): noisy latent (256) | previous-frame latent
//! (256) | action / 3 (2) | sinusoidal features of `t / T` (16).
//!
//! The network output `F` is an estimate of the clean latent, converted to
//! a noise prediction through the forward process:
//!
//! ```text
//! ε̂ = (x_t − √ᾱ_t · F) / √(1 − ᾱ_t)
//! ```
//!
//! In the toy world the next frame is a deterministic function of the
//! previous frame and the action, which `F` can learn directly without
//! having to reproduce the noise in `x_t`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    adam_step, epsilon_loss_weight, sample_training_batch, train, train_with, transitions, AdamState, TrainConfig, TrainOutcome,
    Transition,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};

use crate::diffusion::{Condition, Denoiser, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::toyworld::{ACTION_DIM, ACTION_LIMIT, FRAME_PIXELS};
use crate::SeededRng;

pub const TIME_FEATURES: usize = 16;
pub const INPUT_DIM: usize = 2 * FRAME_PIXELS + ACTION_DIM + TIME_FEATURES;
pub const HIDDEN_DIM: usize = 256;
pub const OUTPUT_DIM: usize = FRAME_PIXELS;

/// Default layer widths, input to output.
pub const LAYER_DIMS: [usize; 4] = [INPUT_DIM, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Dense layers with SiLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Uniform `±1/√fan_in` initialisation for weights, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer dims {dims:?}")));
        }
        let mut rng = SeededRng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                Layer {
                    w: Array2::from_shape_simple_fn((d[0], d[1]), || rng.random_range(-bound..bound)),
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.nrows()];
        d.extend(self.layers.iter().map(|l| l.w.ncols()));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Parameter `i` in the flat order (layer by layer, weights row-major
    /// then biases).
    pub fn get(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.w.len() {
                return l.w.as_slice().expect("standard layout")[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w.as_slice_mut().expect("standard layout")[i] = v;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = v;
                return;
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w);
            z += &l.b;
            if i < last {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        h
    }

    fn forward_cached(&self, input: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut acts = vec![input.to_owned()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w);
            z += &l.b;
            if i < last {
                let h = z.mapv(silu);
                pre.push(z);
                acts.push(h);
            } else {
                return (z, pre, acts);
            }
        }
        unreachable!("at least one layer")
    }

    /// Row-weighted mean squared error against `target`,
    /// `Σ_r w_r ‖out_r − target_r‖² / (rows · cols)`, and its gradient.
    pub fn loss_and_grad(
        &self,
        input: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
        weights: ArrayView1<'_, f64>,
    ) -> (f64, MlpParams) {
        let (out, pre, acts) = self.forward_cached(input);
        let n = out.len() as f64;
        let mut diff = &out - &target;
        let mut loss = 0.0;
        for (mut row, &w) in diff.rows_mut().into_iter().zip(weights) {
            loss += w * row.iter().map(|d| d * d).sum::<f64>();
            row *= 2.0 * w / n;
        }
        loss /= n;

        let mut grads = self.zeros_like();
        let mut delta = diff;
        for l in (0..self.layers.len()).rev() {
            grads.layers[l].w = acts[l].t().dot(&delta);
            grads.layers[l].b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].w.t());
                Zip::from(&mut back).and(&pre[l - 1]).for_each(|d, &z| *d *= silu_grad(z));
                delta = back;
            }
        }
        (loss, grads)
    }

    /// Forward-mode Jacobian-vector product with respect to the input row.
    pub fn jvp(&self, input: &[f64], direction: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d_in = self.dims()[0];
        if input.len() != d_in || direction.len() != d_in {
            return Err(Error::LengthMismatch { expected: d_in, actual: input.len().min(direction.len()) });
        }
        let last = self.layers.len() - 1;
        let mut h = Array1::from(input.to_vec());
        let mut dh = Array1::from(direction.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            let dz = dh.dot(&l.w);
            if i < last {
                dh = Zip::from(&z).and(&dz).map_collect(|&z, &dz| silu_grad(z) * dz);
                h = z.mapv(silu);
            } else {
                h = z;
                dh = dz;
            }
        }
        Ok((h.to_vec(), dh.to_vec()))
    }
}

pub fn silu(z: f64) -> f64 {
    z * crate::truncation::sigmoid(z)
}

pub fn silu_grad(z: f64) -> f64 {
    let s = crate::truncation::sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal features of `t / total`: `sin(π·2^k·s)`, `cos(π·2^k·s)` for
/// `k = 0..8`.
pub fn time_features(t: usize, total: usize) -> [f64; TIME_FEATURES] {
    let s = t as f64 / total as f64;
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let arg = std::f64::consts::PI * (1u32 << k) as f64 * s;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
    out
}

/// Writes one network input row.
pub fn fill_input_row(row: &mut [f64], x_t: &[f64], t: usize, total: usize, context: &[f64], action: &[f64]) {
    let (xs, rest) = row.split_at_mut(FRAME_PIXELS);
    let (cs, rest) = rest.split_at_mut(FRAME_PIXELS);
    let (acts, ts) = rest.split_at_mut(ACTION_DIM);
    xs.copy_from_slice(x_t);
    cs.copy_from_slice(context);
    for (d, a) in acts.iter_mut().zip(action) {
        *d = a / ACTION_LIMIT;
    }
    ts.copy_from_slice(&time_features(t, total));
}

/// The MLP bound to the `ᾱ` table of the schedule it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    pub params: MlpParams,
    alpha_bars: Vec<f64>,
}

/// `ε̂` from the noisy latent and a clean-latent estimate at noise level
/// `alpha_bar`.
pub fn epsilon_from_clean(x_t: f64, clean: f64, alpha_bar: f64) -> f64 {
    (x_t - alpha_bar.sqrt() * clean) / (1.0 - alpha_bar).sqrt()
}

impl TinyDenoiser {
    pub fn new(params: MlpParams, sched: &DiffusionSchedule) -> Result<Self> {
        Self::from_alpha_bars(params, sched.alpha_bars().to_vec())
    }

    /// `alpha_bars[t − 1] = ᾱ_t`; must be strictly decreasing inside (0, 1).
    pub fn from_alpha_bars(params: MlpParams, alpha_bars: Vec<f64>) -> Result<Self> {
        let dims = params.dims();
        if dims[0] != INPUT_DIM || *dims.last().expect("non-empty") != OUTPUT_DIM {
            return Err(Error::ShapeMismatch(format!(
                "network maps {} -> {}, expected {INPUT_DIM} -> {OUTPUT_DIM}",
                dims[0],
                dims.last().expect("non-empty")
            )));
        }
        let ordered = alpha_bars.windows(2).all(|w| w[1] < w[0]);
        let in_range = alpha_bars.iter().all(|&a| a > 0.0 && a < 1.0);
        if alpha_bars.len() < 2 || !ordered || !in_range {
            return Err(Error::InvalidInput(
                "alpha_bar table needs >= 2 strictly decreasing entries in (0, 1)".into(),
            ));
        }
        Ok(Self { params, alpha_bars })
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bars.len()
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn build_input(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::StepOutOfRange { step: t, total: self.total_steps() });
        }
        if x_t.ncols() != FRAME_PIXELS || conds.len() != x_t.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "batch {:?} with {} conditions",
                x_t.dim(),
                conds.len()
            )));
        }
        let mut input = Array2::zeros((x_t.nrows(), INPUT_DIM));
        for ((mut dst, x), c) in input.rows_mut().into_iter().zip(x_t.rows()).zip(conds) {
            if c.context.len() != FRAME_PIXELS || c.action.dim() != ACTION_DIM {
                return Err(Error::ShapeMismatch(format!(
                    "condition has {}-pixel context and {}-D action",
                    c.context.len(),
                    c.action.dim()
                )));
            }
            let x = x.to_vec();
            fill_input_row(
                dst.as_slice_mut().expect("row-major"),
                &x,
                t,
                self.total_steps(),
                &c.context,
                c.action.values(),
            );
        }
        Ok(input)
    }
}

impl Denoiser for TinyDenoiser {
    fn latent_dim(&self) -> usize {
        OUTPUT_DIM
    }

    fn predict_batch(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>> {
        let input = self.build_input(x_t, t, conds)?;
        let mut out = self.params.forward(input.view());
        let ab = self.alpha_bars[t - 1];
        Zip::from(&mut out).and(&x_t).for_each(|o, &x| *o = epsilon_from_clean(x, *o, ab));
        Ok(out)
    }
}
