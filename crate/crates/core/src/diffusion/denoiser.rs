use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::guidance::ActionVector;

/// Conditioning for one noise prediction: the previous frame (as a latent,
/// possibly empty for denoisers that ignore it) and the action.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub context: Vec<f64>,
    pub action: ActionVector,
}

impl Condition {
    pub fn new(context: Vec<f64>, action: ActionVector) -> Self {
        Self { context, action }
    }

    pub fn action_only(action: ActionVector) -> Self {
        Self { context: Vec::new(), action }
    }

    /// Same context, negated action.
    pub fn negated(&self) -> Self {
        Self { context: self.context.clone(), action: self.action.negate() }
    }
}

/// A pure noise predictor `ε̂ = f(x_t, t, condition)`.
///
/// Implementations must be deterministic and reentrant. Row `i` of the batch
/// output may only depend on row `i` of the input and `conds[i]`.
pub trait Denoiser: Sync {
    fn latent_dim(&self) -> usize;

    fn predict_batch(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>>;

    fn predict(&self, x_t: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x_t.len()), x_t)
            .map_err(|e| crate::Error::ShapeMismatch(e.to_string()))?;
        let out = self.predict_batch(x, t, &[cond])?;
        Ok(out.into_raw_vec_and_offset().0)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }

    fn predict_batch(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>> {
        (**self).predict_batch(x_t, t, conds)
    }
}

/// Wraps a denoiser and counts evaluated rows.
pub struct CountingDenoiser<D> {
    inner: D,
    rows: AtomicU64,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self { inner, rows: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.rows.load(Ordering::Relaxed)
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn predict_batch(&self, x_t: ArrayView2<'_, f64>, t: usize, conds: &[&Condition]) -> Result<Array2<f64>> {
        self.rows.fetch_add(x_t.nrows() as u64, Ordering::Relaxed);
        self.inner.predict_batch(x_t, t, conds)
    }
}
