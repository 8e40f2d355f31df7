//! Frame quality metrics: PSNR, SSIM and a pooled "latent" L2.

use crate::error::{ensure_len, Error, Result};
use crate::toyworld::{Frame, FRAME_SIZE};

/// PSNR returned for identical frames, and the upper clamp for all others.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;
/// Side of the average-pooling block for [`latent_l2`].
pub const POOL: usize = 4;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(1 / MSE)` in dB for unit dynamic range, capped at
/// [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred.pixels(), gt.pixels())?))
}

/// Mean SSIM over all 8×8 windows at stride 1 with uniform weights.
/// Window statistics use the population (1/N) normalisation.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    ssim_image(pred.pixels(), gt.pixels(), FRAME_SIZE, FRAME_SIZE)
}

/// [`ssim`] on arbitrary row-major images of at least 8×8.
pub fn ssim_image(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    ensure_len(height * width, a.len())?;
    ensure_len(height * width, b.len())?;
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!("{height}×{width} image is smaller than the SSIM window")));
    }
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;

    // Summed-area tables of x, y, x², y², xy.
    let stride = width + 1;
    let mut tables = vec![[0.0f64; 5]; (height + 1) * stride];
    for i in 0..height {
        for j in 0..width {
            let (x, y) = (a[i * width + j], b[i * width + j]);
            let vals = [x, y, x * x, y * y, x * y];
            let up = tables[i * stride + j + 1];
            let left = tables[(i + 1) * stride + j];
            let diag = tables[i * stride + j];
            let cell = &mut tables[(i + 1) * stride + j + 1];
            for k in 0..5 {
                cell[k] = vals[k] + up[k] + left[k] - diag[k];
            }
        }
    }
    let window_sum = |i: usize, j: usize, k: usize| {
        let (i1, j1) = (i + SSIM_WINDOW, j + SSIM_WINDOW);
        tables[i1 * stride + j1][k] - tables[i * stride + j1][k] - tables[i1 * stride + j][k]
            + tables[i * stride + j][k]
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=height - SSIM_WINDOW {
        for j in 0..=width - SSIM_WINDOW {
            let mx = window_sum(i, j, 0) / n;
            let my = window_sum(i, j, 1) / n;
            let vx = window_sum(i, j, 2) / n - mx * mx;
            let vy = window_sum(i, j, 3) / n - my * my;
            let cxy = window_sum(i, j, 4) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// 4×4 average pooling of a 16×16 frame.
pub fn pooled(frame: &Frame) -> Vec<f64> {
    let side = FRAME_SIZE / POOL;
    let mut out = vec![0.0; side * side];
    for i in 0..FRAME_SIZE {
        for j in 0..FRAME_SIZE {
            out[(i / POOL) * side + j / POOL] += frame.get(i, j);
        }
    }
    let inv = 1.0 / (POOL * POOL) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Mean over frames of `‖pool(pred_k) − pool(gt_k)‖₂ / √(pooled pixels)`.
pub fn latent_l2(pred: &[Frame], gt: &[Frame]) -> Result<f64> {
    ensure_len(gt.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty frame sequence".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (pp, gp) = (pooled(p), pooled(g));
            let sq: f64 = pp.iter().zip(&gp).map(|(a, b)| (a - b) * (a - b)).sum();
            (sq / pp.len() as f64).sqrt()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::render_frame;
    use rand::{Rng, SeedableRng};

    fn random_frame(rng: &mut crate::SeededRng) -> Frame {
        Frame::new((0..256).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct evaluation of the SSIM definition, no summed-area tables.
    fn naive_ssim(a: &Frame, b: &Frame) -> f64 {
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let mut count = 0.0;
        for i in 0..=8 {
            for j in 0..=8 {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for di in 0..8 {
                    for dj in 0..8 {
                        xs.push(a.get(i + di, j + dj));
                        ys.push(b.get(i + di, j + dj));
                    }
                }
                let mx = xs.iter().sum::<f64>() / 64.0;
                let my = ys.iter().sum::<f64>() / 64.0;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 64.0;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 64.0;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 64.0;
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn psnr_examples() {
        let f = render_frame([6.0, 9.0]).unwrap();
        assert_eq!(psnr(&f, &f).unwrap(), 100.0);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(0.0001), 40.0);
        let a = Frame::constant(0.2).unwrap();
        let b = Frame::constant(0.3).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr_from_mse(1e-30), PSNR_CAP);
    }

    #[test]
    fn psnr_strictly_decreasing() {
        let mut last = f64::INFINITY;
        for k in 1..200 {
            let v = psnr_from_mse(k as f64 * 1e-3);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_identity_and_constant() {
        let f = render_frame([3.5, 12.0]).unwrap();
        assert!((ssim(&f, &f).unwrap() - 1.0).abs() < 1e-12);
        let c = Frame::constant(0.4).unwrap();
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let mut rng = crate::SeededRng::seed_from_u64(12);
        for _ in 0..20 {
            let (a, b) = (random_frame(&mut rng), random_frame(&mut rng));
            assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-9);
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
        // Inverted checkerboard-free pattern: the blob and its negative.
        let f = render_frame([7.3, 5.1]).unwrap();
        let inv = Frame::new(f.pixels().iter().map(|p| 1.0 - p).collect()).unwrap();
        let s = ssim(&f, &inv).unwrap();
        assert!((s - naive_ssim(&f, &inv)).abs() < 1e-9);
        assert!(s < 0.0);
    }

    #[test]
    fn latent_l2_examples() {
        let gt = vec![render_frame([4.0, 4.0]).unwrap(), Frame::constant(0.5).unwrap()];
        assert_eq!(latent_l2(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<Frame> = vec![
            Frame::constant(0.3).unwrap(),
            Frame::constant(0.6).unwrap(),
        ];
        let base: Vec<Frame> = vec![Frame::constant(0.2).unwrap(), Frame::constant(0.5).unwrap()];
        assert!((latent_l2(&shifted, &base).unwrap() - 0.1).abs() < 1e-12);
        assert!(latent_l2(&gt[..1], &gt).is_err());
    }

    #[test]
    fn latent_l2_matches_unpooled_recomputation() {
        let mut rng = crate::SeededRng::seed_from_u64(3);
        let a: Vec<Frame> = (0..4).map(|_| random_frame(&mut rng)).collect();
        let b: Vec<Frame> = (0..4).map(|_| random_frame(&mut rng)).collect();
        // Pool the difference directly from raw pixel indices.
        let mut expected = 0.0;
        for (p, g) in a.iter().zip(&b) {
            let mut sq = 0.0;
            for bi in 0..4 {
                for bj in 0..4 {
                    let mut d = 0.0;
                    for i in 0..4 {
                        for j in 0..4 {
                            let idx = (4 * bi + i) * 16 + 4 * bj + j;
                            d += p.pixels()[idx] - g.pixels()[idx];
                        }
                    }
                    sq += (d / 16.0).powi(2);
                }
            }
            expected += (sq / 16.0).sqrt();
        }
        expected /= 4.0;
        assert!((latent_l2(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((latent_l2(&a, &b).unwrap() - latent_l2(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn latent_l2_triangle_inequality() {
        let mut rng = crate::SeededRng::seed_from_u64(8);
        for _ in 0..50 {
            let x = [random_frame(&mut rng)];
            let y = [random_frame(&mut rng)];
            let z = [random_frame(&mut rng)];
            let xz = latent_l2(&x, &z).unwrap();
            assert!(xz <= latent_l2(&x, &y).unwrap() + latent_l2(&y, &z).unwrap() + 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(mse(&[0.1], &[0.1, 0.2]).is_err());
        assert!(ssim_image(&[0.0; 16], &[0.0; 16], 4, 4).is_err());
    }
}
