//! Reconstruction losses for image translation: L1, Laplacian, Haar wavelet,
//! a pluggable perceptual term, the adversarial min-max value and the
//! weighted generator loss.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-7;
/// Downsamplings used by the pyramid stand-in for the perceptual term.
pub const PYRAMID_LEVELS: usize = 3;

pub fn l1_loss(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// 4-neighbour Laplacian (center -4, cross 1) with edge replication.
pub fn laplacian(grid: &ImageGrid) -> ImageGrid {
    let (h, w) = grid.dims();
    ImageGrid::from_fn(h, w, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let center = grid.get_clamped(r, c);
        // differences first: a constant offset cancels exactly in each term
        (grid.get_clamped(r - 1, c) - center)
            + (grid.get_clamped(r + 1, c) - center)
            + (grid.get_clamped(r, c - 1) - center)
            + (grid.get_clamped(r, c + 1) - center)
    })
}

pub fn laplacian_loss(recon: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
    recon.check_same_dims(truth)?;
    l1_loss(&laplacian(recon), &laplacian(truth))
}

/// Single-level orthonormal Haar decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands {
    pub ll: ImageGrid,
    /// Horizontal detail (differences across columns).
    pub lh: ImageGrid,
    /// Vertical detail (differences across rows).
    pub hl: ImageGrid,
    pub hh: ImageGrid,
}

impl HaarBands {
    pub fn bands(&self) -> [&ImageGrid; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands()
            .iter()
            .map(|b| b.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

pub fn haar_forward(grid: &ImageGrid) -> Result<HaarBands> {
    let (h, w) = grid.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "Haar transform needs even dimensions, got {h}x{w}"
        )));
    }
    let (bh, bw) = (h / 2, w / 2);
    let mut ll = ImageGrid::zeros(bh, bw);
    let mut lh = ImageGrid::zeros(bh, bw);
    let mut hl = ImageGrid::zeros(bh, bw);
    let mut hh = ImageGrid::zeros(bh, bw);
    for r in 0..bh {
        for c in 0..bw {
            let a = grid.get(2 * r, 2 * c);
            let b = grid.get(2 * r, 2 * c + 1);
            let d = grid.get(2 * r + 1, 2 * c);
            let e = grid.get(2 * r + 1, 2 * c + 1);
            ll[(r, c)] = 0.5 * (a + b + d + e);
            lh[(r, c)] = 0.5 * (a - b + d - e);
            hl[(r, c)] = 0.5 * (a + b - d - e);
            hh[(r, c)] = 0.5 * (a - b - d + e);
        }
    }
    Ok(HaarBands { ll, lh, hl, hh })
}

pub fn haar_inverse(bands: &HaarBands) -> ImageGrid {
    let (bh, bw) = bands.ll.dims();
    let mut out = ImageGrid::zeros(2 * bh, 2 * bw);
    for r in 0..bh {
        for c in 0..bw {
            let (s, x, y, z) = (
                bands.ll.get(r, c),
                bands.lh.get(r, c),
                bands.hl.get(r, c),
                bands.hh.get(r, c),
            );
            out[(2 * r, 2 * c)] = 0.5 * (s + x + y + z);
            out[(2 * r, 2 * c + 1)] = 0.5 * (s - x + y - z);
            out[(2 * r + 1, 2 * c)] = 0.5 * (s + x - y - z);
            out[(2 * r + 1, 2 * c + 1)] = 0.5 * (s - x - y + z);
        }
    }
    out
}

/// Mean over the four subbands of the per-band L1 distance.
pub fn wavelet_loss(recon: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
    recon.check_same_dims(truth)?;
    let a = haar_forward(recon)?;
    let b = haar_forward(truth)?;
    let mut total = 0.0;
    for (x, y) in a.bands().iter().zip(b.bands()) {
        total += l1_loss(x, y)?;
    }
    Ok(total / 4.0)
}

/// Feature-space distance used in the perceptual slot of the generator loss.
pub trait PerceptualLoss {
    fn loss(&self, recon: &ImageGrid, truth: &ImageGrid) -> Result<f64>;
}

/// Network-free stand-in: mean L1 over the image and `levels` successive
/// 2x2 average-pooled copies.
#[derive(Debug, Clone, Copy)]
pub struct PyramidL1 {
    pub levels: usize,
}

impl Default for PyramidL1 {
    fn default() -> Self {
        Self {
            levels: PYRAMID_LEVELS,
        }
    }
}

fn avg_pool2(grid: &ImageGrid) -> ImageGrid {
    let (h, w) = ((grid.height() / 2).max(1), (grid.width() / 2).max(1));
    ImageGrid::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dr in 0..2 {
            for dc in 0..2 {
                let (rr, cc) = (2 * r + dr, 2 * c + dc);
                if rr < grid.height() && cc < grid.width() {
                    acc += grid.get(rr, cc);
                    n += 1.0;
                }
            }
        }
        acc / n
    })
}

impl PerceptualLoss for PyramidL1 {
    fn loss(&self, recon: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
        recon.check_same_dims(truth)?;
        let (mut a, mut b) = (recon.clone(), truth.clone());
        let mut total = l1_loss(&a, &b)?;
        for _ in 0..self.levels {
            a = avg_pool2(&a);
            b = avg_pool2(&b);
            total += l1_loss(&a, &b)?;
        }
        Ok(total / (self.levels + 1) as f64)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// `mean log D(x) + mean log(1 - D(G(z)))`.
pub fn adversarial_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("discriminator outputs must be non-empty"));
    }
    let real = d_real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / d_fake.len() as f64;
    Ok(real + fake)
}

/// Non-saturating generator term `-mean log D(G(z))`.
pub fn generator_adversarial_loss(d_fake: &[f64]) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(Error::invalid("discriminator outputs must be non-empty"));
    }
    Ok(-d_fake.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / d_fake.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Perceptual slot.
    pub alpha1: f64,
    /// L1.
    pub alpha2: f64,
    /// Adversarial.
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 0.0,
            alpha2: 10.0,
            alpha3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.alpha1, self.alpha2, self.alpha3] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

impl FromStr for LossWeights {
    type Err = Error;

    /// Parses `"a1,a2,a3"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad weights `{s}`: {e}")))?;
        let [alpha1, alpha2, alpha3] = parts[..] else {
            return Err(Error::invalid(format!("expected three weights, got `{s}`")));
        };
        let w = Self { alpha1, alpha2, alpha3 };
        w.validate()?;
        Ok(w)
    }
}

pub fn generator_loss(perceptual: f64, l1: f64, adversarial: f64, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.alpha1 * perceptual + weights.alpha2 * l1 + weights.alpha3 * adversarial)
}

/// What fills the perceptual slot of the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualSlot {
    None,
    #[default]
    Pyramid,
    Laplacian,
    Wavelet,
}

impl FromStr for PerceptualSlot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "pyramid" | "perceptual" => Ok(Self::Pyramid),
            "laplacian" => Ok(Self::Laplacian),
            "wavelet" => Ok(Self::Wavelet),
            other => Err(Error::invalid(format!("unknown perceptual slot `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub laplacian: f64,
    pub wavelet: f64,
    pub adversarial: f64,
    /// Value placed in the perceptual slot.
    pub perceptual: f64,
    pub total: f64,
}

impl LossReport {
    /// All deterministic losses for one pair; `adversarial` is supplied by
    /// the caller (zero when no discriminator is involved).
    pub fn compute(
        recon: &ImageGrid,
        truth: &ImageGrid,
        weights: &LossWeights,
        slot: PerceptualSlot,
        adversarial: f64,
    ) -> Result<Self> {
        let l1 = l1_loss(recon, truth)?;
        let lap = laplacian_loss(recon, truth)?;
        let wav = wavelet_loss(recon, truth)?;
        let perceptual = match slot {
            PerceptualSlot::None => 0.0,
            PerceptualSlot::Pyramid => PyramidL1::default().loss(recon, truth)?,
            PerceptualSlot::Laplacian => lap,
            PerceptualSlot::Wavelet => wav,
        };
        Ok(Self {
            l1,
            laplacian: lap,
            wavelet: wav,
            adversarial,
            perceptual,
            total: generator_loss(perceptual, l1, adversarial, weights)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn l1_examples() {
        let a = random_grid(6, 8, 1);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.25);
        assert!((l1_loss(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        let c = random_grid(6, 8, 2);
        let mut acc = 0.0;
        for r in 0..6 {
            for col in 0..8 {
                acc += (a.get(r, col) - c.get(r, col)).abs();
            }
        }
        assert!((l1_loss(&a, &c).unwrap() - acc / 48.0).abs() < 1e-12);
        assert!(l1_loss(&a, &ImageGrid::zeros(6, 7)).is_err());
    }

    #[test]
    fn laplacian_single_center_pixel() {
        let a = ImageGrid::zeros(3, 3);
        let mut b = a.clone();
        let delta = 0.3;
        b[(1, 1)] = delta;
        // center -4d, four edge-middles +d each, corners 0
        let loss = laplacian_loss(&b, &a).unwrap();
        assert!((loss - 8.0 * delta / 9.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_kills_constants() {
        let a = random_grid(9, 7, 5);
        assert_eq!(laplacian_loss(&a, &a).unwrap(), 0.0);
        let flat = laplacian(&ImageGrid::filled(5, 5, 0.7));
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wavelet_constants_closed_form() {
        let a = ImageGrid::filled(8, 6, 0.2);
        let b = ImageGrid::filled(8, 6, 0.7);
        // LL of a constant c is 2c; other bands vanish
        assert!((wavelet_loss(&a, &b).unwrap() - 0.5 * 0.5).abs() < 1e-15);
        assert_eq!(wavelet_loss(&a, &a).unwrap(), 0.0);
        assert!(wavelet_loss(&ImageGrid::zeros(3, 4), &ImageGrid::zeros(3, 4)).is_err());
    }

    #[test]
    fn haar_parseval_and_inverse() {
        let a = random_grid(10, 14, 9);
        let bands = haar_forward(&a).unwrap();
        let energy: f64 = a.data().iter().map(|v| v * v).sum();
        assert!((bands.energy() - energy).abs() < 1e-9);
        let back = haar_inverse(&bands);
        for (x, y) in a.data().iter().zip(back.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn adversarial_examples() {
        let v = adversarial_value(&[0.5; 4], &[0.5; 3]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let perfect = adversarial_value(&[1.0], &[0.0]).unwrap();
        assert!((perfect - 2.0 * (1.0 - LOG_EPS).ln()).abs() < 1e-15);
        assert!(perfect <= 0.0 && perfect > -1e-6);
        assert!(adversarial_value(&[], &[0.5]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..17).map(|_| rng.gen_range(0.01..0.99)).collect();
        let f: Vec<f64> = (0..11).map(|_| rng.gen_range(0.01..0.99)).collect();
        let direct = r.iter().map(|p| p.ln()).sum::<f64>() / 17.0
            + f.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 11.0;
        assert!((adversarial_value(&r, &f).unwrap() - direct).abs() < 1e-12);
        assert!((generator_adversarial_loss(&[0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn generator_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(generator_loss(7.0, 0.02, 0.9, &w).unwrap(), 1.1);
        let zero = LossWeights { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0 };
        assert_eq!(generator_loss(7.0, 0.02, 0.9, &zero).unwrap(), 0.0);
        assert!(generator_loss(1.0, 1.0, 1.0, &LossWeights { alpha1: -1.0, ..w }).is_err());
        assert_eq!("0,10,1".parse::<LossWeights>().unwrap(), w);
        assert!("0,10".parse::<LossWeights>().is_err());
    }

    #[test]
    fn slot_substitution_touches_only_perceptual_term() {
        let a = random_grid(16, 16, 1);
        let b = random_grid(16, 16, 2);
        let w = LossWeights { alpha1: 1.0, alpha2: 10.0, alpha3: 1.0 };
        let lap = LossReport::compute(&a, &b, &w, PerceptualSlot::Laplacian, 0.4).unwrap();
        let wav = LossReport::compute(&a, &b, &w, PerceptualSlot::Wavelet, 0.4).unwrap();
        assert_eq!(lap.l1, wav.l1);
        assert_eq!(lap.adversarial, wav.adversarial);
        assert_eq!(lap.perceptual, lap.laplacian);
        assert_eq!(wav.perceptual, wav.wavelet);
        assert!(((lap.total - wav.total) - (lap.laplacian - wav.wavelet)).abs() < 1e-12);
    }

    #[test]
    fn pyramid_is_zero_on_identity() {
        let a = random_grid(16, 12, 4);
        assert_eq!(PyramidL1::default().loss(&a, &a).unwrap(), 0.0);
        assert!(PyramidL1::default().loss(&a, &a.map(|v| v + 0.1)).unwrap() > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn losses_symmetric_and_non_negative(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_grid(8, 10, s1);
            let b = random_grid(8, 10, s2);
            for f in [l1_loss, laplacian_loss, wavelet_loss] {
                let ab = f(&a, &b).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - f(&b, &a).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn generator_loss_linear(p in 0.0f64..5.0, l in 0.0f64..5.0, ad in 0.0f64..5.0, k in 0.0f64..3.0) {
            let w = LossWeights { alpha1: 0.3, alpha2: 10.0, alpha3: 1.0 };
            let base = generator_loss(p, l, ad, &w).unwrap();
            let bumped = generator_loss(p + k, l, ad, &w).unwrap();
            prop_assert!((bumped - base - 0.3 * k).abs() < 1e-9);
        }
    }
}
