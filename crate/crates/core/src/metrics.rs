//! Full-reference image quality metrics: MSE, PSNR and SSIM.
//!
//! SSIM here means the mean of local SSIM values over every position where
//! an 11x11 Gaussian window (sigma 1.5) fits entirely inside the image, with
//! `C1 = (0.01 L)^2` and `C2 = (0.03 L)^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_kernel, ImageGrid};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    /// `f64::INFINITY` when `mse == 0`.
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(a: &ImageGrid, b: &ImageGrid, dynamic_range: f64) -> Result<Self> {
        let mse = mse(a, b)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse, dynamic_range)?,
            ssim: ssim(a, b, dynamic_range)?,
        })
    }
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr(a: &ImageGrid, b: &ImageGrid, dynamic_range: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, dynamic_range)
}

/// `10 log10(L^2 / mse)`, or `+inf` for a perfect match.
pub fn psnr_from_mse(mse: f64, dynamic_range: f64) -> Result<f64> {
    if !(dynamic_range > 0.0) {
        return Err(Error::invalid(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    if mse < 0.0 || mse.is_nan() {
        return Err(Error::invalid(format!("mse must be non-negative, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (dynamic_range * dynamic_range / mse).log10())
}

pub fn ssim(a: &ImageGrid, b: &ImageGrid, dynamic_range: f64) -> Result<f64> {
    a.check_same_dims(b)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::invalid("dynamic range must be positive"));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let kernel = gaussian_kernel(SSIM_SIGMA);
    debug_assert_eq!(kernel.len(), SSIM_WINDOW);

    let xs = a.data();
    let ys = b.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();

    let mu_x = filter_valid(xs, h, w, &kernel);
    let mu_y = filter_valid(ys, h, w, &kernel);
    let e_xx = filter_valid(&xx, h, w, &kernel);
    let e_yy = filter_valid(&yy, h, w, &kernel);
    let e_xy = filter_valid(&xy, h, w, &kernel);

    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

/// Separable "valid" correlation: output is `(h-k+1) x (w-k+1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = kernel.iter().zip(&line[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn mse_examples() {
        let a = ImageGrid::zeros(4, 4);
        let b = ImageGrid::filled(4, 4, 0.1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(
            mse(&a, &ImageGrid::zeros(4, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mse_matches_double_loop() {
        let a = random_grid(13, 17, 1);
        let b = random_grid(13, 17, 2);
        let mut acc = 0.0;
        for r in 0..13 {
            for c in 0..17 {
                let d = a.get(r, c) - b.get(r, c);
                acc += d * d;
            }
        }
        assert!((mse(&a, &b).unwrap() - acc / 221.0).abs() < 1e-12);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn psnr_sentinel_and_errors() {
        assert_eq!(psnr_from_mse(0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr_from_mse(0.01, 0.0).is_err());
        assert!((psnr_from_mse(0.01, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let p = psnr_from_mse(i as f64 * 1e-3, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_grid(24, 20, 3);
        let b = random_grid(24, 20, 4);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_of_constant_images_hits_closed_form() {
        let a = ImageGrid::zeros(16, 16);
        let b = ImageGrid::filled(16, 16, 1.0);
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageGrid::zeros(10, 40);
        assert!(ssim(&a, &a, 1.0).is_err());
    }
}
