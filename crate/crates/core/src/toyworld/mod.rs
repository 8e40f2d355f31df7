//! A 2-DoF point-mass robot rendered as a Gaussian blob on a 16×16 frame.

mod io;
mod rollout;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetHeader, DATASET_MAGIC, DATASET_VERSION};
pub use rollout::{rollout_batch, rollout_long, rollout_short, Rollout, RolloutControls, RolloutRequest};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_len, Error, Result};
use crate::guidance::ActionVector;
use crate::SeededRng;

pub const FRAME_SIZE: usize = 16;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
pub const ACTION_DIM: usize = 2;
/// Actions per generation pass.
pub const SEGMENT_LEN: usize = 15;
pub const BLOB_SIGMA: f64 = 1.5;
pub const ACTION_LIMIT: f64 = 3.0;
const POS_MAX: f64 = (FRAME_SIZE - 1) as f64;

/// Robot centre `[x, y]` in pixel units.
pub type Position = [f64; 2];

/// A 16×16 grayscale frame, row-major, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Vec<f64>);

impl Frame {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        ensure_len(FRAME_PIXELS, pixels.len())?;
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self(pixels))
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![value; FRAME_PIXELS])
    }

    pub fn pixels(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row * FRAME_SIZE + col]
    }

    /// Latent encoding `2p − 1`.
    pub fn to_latent(&self) -> Vec<f64> {
        self.0.iter().map(|p| 2.0 * p - 1.0).collect()
    }

    /// Inverse of [`Frame::to_latent`], clamped into the valid pixel range.
    pub fn from_latent(latent: &[f64]) -> Result<Self> {
        ensure_len(FRAME_PIXELS, latent.len())?;
        Ok(Self(latent.iter().map(|x| ((x + 1.0) * 0.5).clamp(0.0, 1.0)).collect()))
    }

    /// Brightest pixel as `(row, col)`; ties resolve to the first in
    /// row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let (idx, _) = self
            .0
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (idx / FRAME_SIZE, idx % FRAME_SIZE)
    }
}

/// Renders an isotropic Gaussian blob with peak 1.0 centred at `p`.
pub fn render_frame(p: Position) -> Result<Frame> {
    if !p.iter().all(|c| (0.0..=POS_MAX).contains(c)) {
        return Err(Error::InvalidInput(format!("position {p:?} outside [0, {POS_MAX}]²")));
    }
    let denom = 2.0 * BLOB_SIGMA * BLOB_SIGMA;
    let mut pixels = Vec::with_capacity(FRAME_PIXELS);
    for i in 0..FRAME_SIZE {
        let dy = i as f64 - p[1];
        for j in 0..FRAME_SIZE {
            let dx = j as f64 - p[0];
            pixels.push((-(dy * dy + dx * dx) / denom).exp());
        }
    }
    Ok(Frame(pixels))
}

/// `clamp(p + a, [0, 15]²)`.
pub fn step_dynamics(p: Position, a: &ActionVector) -> Position {
    let v = a.values();
    [
        (p[0] + v[0]).clamp(0.0, POS_MAX),
        (p[1] + v.get(1).copied().unwrap_or(0.0)).clamp(0.0, POS_MAX),
    ]
}

/// A rendered trajectory. `frames[k + 1]` is the render of
/// `step_dynamics(positions[k], actions[k])`.
///
/// Stored values are rounded to `f32` precision at construction so the
/// dataset file format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub seed: u64,
    pub positions: Vec<Position>,
    pub actions: Vec<ActionVector>,
    pub frames: Vec<Frame>,
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

impl Episode {
    /// Rolls the dynamics forward from `start` and renders every frame.
    pub fn from_actions(id: u64, seed: u64, start: Position, actions: &[ActionVector]) -> Result<Self> {
        let mut pos = [round32(start[0]), round32(start[1])];
        let actions: Vec<ActionVector> = actions
            .iter()
            .map(|a| ActionVector::new(a.values().iter().map(|&v| round32(v)).collect()))
            .collect::<Result<_>>()?;
        let mut positions = vec![pos];
        for a in &actions {
            ensure_len(ACTION_DIM, a.dim())?;
            let next = step_dynamics(pos, a);
            pos = [round32(next[0]), round32(next[1])];
            positions.push(pos);
        }
        let frames = positions
            .iter()
            .map(|&p| render_frame(p).map(|f| Frame(f.0.into_iter().map(round32).collect())))
            .collect::<Result<_>>()?;
        Ok(Self { id, seed, positions, actions, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn segments(&self) -> usize {
        self.actions.len() / SEGMENT_LEN
    }

    /// The first `k` segments (`1 + 15k` frames).
    pub fn prefix(&self, segments: usize) -> Result<Self> {
        let n = segments * SEGMENT_LEN;
        if segments == 0 || n > self.actions.len() {
            return Err(Error::InvalidInput(format!(
                "episode {} has {} actions, cannot take {segments} segments",
                self.id,
                self.actions.len()
            )));
        }
        Ok(Self {
            id: self.id,
            seed: self.seed,
            positions: self.positions[..=n].to_vec(),
            actions: self.actions[..n].to_vec(),
            frames: self.frames[..=n].to_vec(),
        })
    }

    /// The short-trajectory view: reference frame plus 15 actions.
    pub fn short(&self) -> Result<Self> {
        self.prefix(1)
    }
}

/// Draws one action from `0.3·N(0, 0.1²·I) + 0.7·U([−3, 3]²)`, clamped to
/// `[−3, 3]²`.
pub fn sample_action<R: Rng + ?Sized>(rng: &mut R) -> ActionVector {
    let small = Normal::new(0.0, 0.1).expect("valid sigma");
    let v: Vec<f64> = if rng.random_bool(0.3) {
        (0..ACTION_DIM).map(|_| small.sample(rng)).collect()
    } else {
        (0..ACTION_DIM)
            .map(|_| rng.random_range(-ACTION_LIMIT..=ACTION_LIMIT))
            .collect()
    };
    ActionVector::new(v.into_iter().map(|x| x.clamp(-ACTION_LIMIT, ACTION_LIMIT)).collect())
        .expect("finite draw")
}

/// Generates `n_episodes` episodes of `segments · 15` actions each.
/// Episode `i` depends only on `(seed, i)`.
pub fn generate_episodes(n_episodes: usize, seed: u64, segments: usize) -> Result<Vec<Episode>> {
    if n_episodes == 0 || segments == 0 {
        return Err(Error::InvalidInput("need at least one episode and one segment".into()));
    }
    (0..n_episodes as u64)
        .map(|id| {
            let mut rng = SeededRng::seed_from_u64(seed);
            rng.set_stream(id);
            let start = [rng.random_range(3.0..=12.0), rng.random_range(3.0..=12.0)];
            let actions: Vec<ActionVector> =
                (0..segments * SEGMENT_LEN).map(|_| sample_action(&mut rng)).collect();
            Episode::from_actions(id, seed, start, &actions)
        })
        .collect()
}

/// Short (16-frame) episodes.
pub fn generate_dataset(n_episodes: usize, seed: u64) -> Result<Vec<Episode>> {
    generate_episodes(n_episodes, seed, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_centre() {
        let f = render_frame([8.0, 8.0]).unwrap();
        assert_eq!(f.get(8, 8), 1.0);
        for i in 0..FRAME_SIZE {
            for j in 0..FRAME_SIZE {
                assert_eq!(f.get(i, j), f.get(j, i));
            }
        }
        // Direct double-loop sum in numpy: 14.137161701696918.
        let total: f64 = f.pixels().iter().sum();
        assert!((total - 14.137_161_701_696_918).abs() < 1e-12);
    }

    #[test]
    fn render_shift_equivariance() {
        let a = render_frame([8.0, 8.0]).unwrap();
        let b = render_frame([7.0, 7.0]).unwrap();
        for i in 1..FRAME_SIZE {
            for j in 1..FRAME_SIZE {
                assert_eq!(a.get(i, j), b.get(i - 1, j - 1));
            }
        }
    }

    #[test]
    fn render_out_of_bounds() {
        assert!(render_frame([-0.1, 3.0]).is_err());
        assert!(render_frame([3.0, 15.5]).is_err());
        assert!(render_frame([15.0, 0.0]).is_ok());
    }

    #[test]
    fn argmax_tracks_rounded_centre() {
        for &(x, y) in &[(3.2, 9.7), (12.49, 4.51), (7.0, 7.0), (1.6, 13.4)] {
            let f = render_frame([x, y]).unwrap();
            assert_eq!(f.argmax(), (y.round() as usize, x.round() as usize));
        }
    }

    #[test]
    fn dynamics_examples() {
        let a = |x: f64, y: f64| ActionVector::new(vec![x, y]).unwrap();
        assert_eq!(step_dynamics([5.0, 5.0], &a(1.0, -1.0)), [6.0, 4.0]);
        assert_eq!(step_dynamics([15.0, 15.0], &a(2.0, 2.0)), [15.0, 15.0]);
        assert_eq!(step_dynamics([0.5, 0.5], &a(-3.0, -3.0)), [0.0, 0.0]);
    }

    #[test]
    fn latent_round_trip() {
        let f = render_frame([4.0, 11.0]).unwrap();
        let back = Frame::from_latent(&f.to_latent()).unwrap();
        for (a, b) in f.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-15);
        }
        let clamped = Frame::from_latent(&vec![5.0; FRAME_PIXELS]).unwrap();
        assert!(clamped.pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn frame_invariants() {
        assert!(Frame::new(vec![0.5; 10]).is_err());
        assert!(Frame::new(vec![1.5; FRAME_PIXELS]).is_err());
        assert!(Frame::constant(0.2).is_ok());
    }

    #[test]
    fn dataset_is_reproducible_and_consistent() {
        let a = generate_dataset(20, 9).unwrap();
        let b = generate_dataset(20, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(20, 10).unwrap());
        for ep in &a {
            assert_eq!(ep.len(), 16);
            assert_eq!(ep.actions.len(), 15);
            assert!(ep.positions[0].iter().all(|c| (3.0..=12.0).contains(c)));
            for k in 0..15 {
                let v = ep.actions[k].values();
                assert!(v.iter().all(|x| x.abs() <= ACTION_LIMIT));
                let next = step_dynamics(ep.positions[k], &ep.actions[k]);
                assert!((next[0] - ep.positions[k + 1][0]).abs() < 1e-5);
                let r = render_frame(ep.positions[k + 1]).unwrap();
                for (p, q) in r.pixels().iter().zip(ep.frames[k + 1].pixels()) {
                    assert!((p - q).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn episode_prefix_matches_shorter_generation() {
        let long = generate_episodes(3, 4, 3).unwrap();
        assert_eq!(long[0].len(), 46);
        assert_eq!(long[1].segments(), 3);
        let short = long[1].short().unwrap();
        assert_eq!(short.len(), 16);
        assert_eq!(short.frames[..], long[1].frames[..16]);
        assert!(long[0].prefix(4).is_err());
        assert!(long[0].prefix(0).is_err());
    }

    #[test]
    fn small_action_fraction() {
        // P(‖a‖ < 0.3) = 0.3·(1 − e^{-4.5}) + 0.7·π·0.09/36 = 0.30217 (mpmath).
        let eps = generate_dataset(10_000, 1).unwrap();
        let (small, total) = eps.iter().flat_map(|e| &e.actions).fold((0usize, 0usize), |(s, n), a| {
            (s + usize::from(a.norm() < 0.3), n + 1)
        });
        let frac = small as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.02, "fraction {frac}");
        assert!((frac - 0.302_165).abs() < 0.005, "fraction {frac}");
    }
}
