//! 2D FFT and high-frequency spectral transfer between images.
//!
//! The centered low band of the source spectrum is kept; every coefficient
//! outside it comes from the target. With `beta = 0` only DC survives from
//! the source, with `beta = 1` (square images) nothing is replaced.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::ImageGrid;

/// The beta values of the reference sweep.
pub const REFERENCE_BETAS: [f64; 4] = [0.01, 0.05, 0.09, 0.3];

/// Complex spectrum, unshifted (DC at index 0), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.width + c]
    }

    /// Squared L2 distance between two spectra.
    pub fn distance_sq(&self, other: &Spectrum) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }
}

fn transform_2d(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

/// Unnormalized forward transform.
pub fn fft2(grid: &ImageGrid) -> Result<Spectrum> {
    let (h, w) = grid.dims();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("fft2 needs at least 2x2, got {h}x{w}")));
    }
    let mut data: Vec<Complex64> = grid.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(h, w, &mut data, false);
    Ok(Spectrum {
        height: h,
        width: w,
        data,
    })
}

/// Inverse transform scaled by `1 / (H W)`; complex result.
pub fn ifft2_complex(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut data = spectrum.data.clone();
    transform_2d(spectrum.height, spectrum.width, &mut data, true);
    let scale = 1.0 / (spectrum.height * spectrum.width) as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    data
}

/// Inverse transform keeping the real part.
pub fn ifft2(spectrum: &Spectrum) -> ImageGrid {
    let data = ifft2_complex(spectrum).into_iter().map(|v| v.re).collect();
    ImageGrid::new(spectrum.height, spectrum.width, data).expect("spectrum dims are valid")
}

/// Signed frequency of unshifted index `k` on an axis of length `n`, using
/// the fftshift convention (Nyquist is negative for even `n`).
fn signed_frequency(k: usize, n: usize) -> isize {
    let half = n / 2;
    // centered index i = (k + half) mod n, frequency = i - half
    ((k + half) % n) as isize - half as isize
}

/// Centered square low band of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBandMask {
    pub beta: f64,
    pub height: usize,
    pub width: usize,
    /// `floor(beta * min(H, W) / 2)`.
    pub half_width: usize,
    /// `true` = low band, on the centered (DC-at-center) layout.
    pub mask: Vec<bool>,
}

impl SpectralBandMask {
    pub fn new(beta: f64, height: usize, width: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
        }
        let half_width = (beta * height.min(width) as f64 / 2.0).floor() as usize;
        let (ch, cw) = (height / 2, width / 2);
        let mut mask = vec![false; height * width];
        for r in 0..height {
            for c in 0..width {
                mask[r * width + c] = r.abs_diff(ch) <= half_width && c.abs_diff(cw) <= half_width;
            }
        }
        Ok(Self {
            beta,
            height,
            width,
            half_width,
            mask,
        })
    }

    pub fn is_low_centered(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.width + c]
    }

    /// Lookup by unshifted spectrum index.
    pub fn is_low(&self, r: usize, c: usize) -> bool {
        let b = self.half_width as isize;
        signed_frequency(r, self.height).abs() <= b && signed_frequency(c, self.width).abs() <= b
    }

    pub fn low_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SwapMode {
    /// Splice amplitude spectra, keep the source phase everywhere.
    #[default]
    Amplitude,
    /// Splice full complex coefficients.
    Complex,
}

impl FromStr for SwapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude" => Ok(Self::Amplitude),
            "complex" => Ok(Self::Complex),
            other => Err(Error::invalid(format!("unknown swap mode `{other}`"))),
        }
    }
}

/// Spliced spectrum before the inverse transform.
pub fn splice_spectra(source: &Spectrum, target: &Spectrum, mask: &SpectralBandMask, mode: SwapMode) -> Spectrum {
    let (h, w) = (source.height, source.width);
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let s = source.get(r, c);
            let t = target.get(r, c);
            let low = mask.is_low(r, c);
            data.push(match mode {
                SwapMode::Complex => {
                    if low {
                        s
                    } else {
                        t
                    }
                }
                SwapMode::Amplitude => {
                    let amp = if low { s.norm() } else { t.norm() };
                    Complex64::from_polar(amp, s.arg())
                }
            });
        }
    }
    Spectrum {
        height: h,
        width: w,
        data,
    }
}

/// Real part of the spliced inverse transform, not yet clamped.
pub fn spectral_swap_unclamped(
    source: &ImageGrid,
    target: &ImageGrid,
    beta: f64,
    mode: SwapMode,
) -> Result<ImageGrid> {
    source.check_same_dims(target)?;
    let mask = SpectralBandMask::new(beta, source.height(), source.width())?;
    let spliced = splice_spectra(&fft2(source)?, &fft2(target)?, &mask, mode);
    Ok(ifft2(&spliced))
}

/// Keep the source's low band, take the target's high band; output clamped
/// to `[0, 1]`.
pub fn spectral_swap(source: &ImageGrid, target: &ImageGrid, beta: f64, mode: SwapMode) -> Result<ImageGrid> {
    Ok(spectral_swap_unclamped(source, target, beta, mode)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Pairing {
    /// Source `i` uses target `i mod len`.
    Index,
    /// Target drawn uniformly per source from a seeded stream.
    RandomSeeded { seed: u64 },
}

/// Target index for every source; computed up front so parallel execution
/// cannot change the draw.
pub fn pair_targets(num_sources: usize, num_targets: usize, pairing: Pairing) -> Result<Vec<usize>> {
    if num_targets == 0 {
        return Err(Error::invalid("target set is empty"));
    }
    Ok(match pairing {
        Pairing::Index => (0..num_sources).map(|i| i % num_targets).collect(),
        Pairing::RandomSeeded { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..num_sources).map(|_| rng.gen_range(0..num_targets)).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub source_index: usize,
    pub target_index: usize,
    pub beta: f64,
    pub image: ImageGrid,
}

pub fn adapt_batch(
    sources: &[ImageGrid],
    targets: &[ImageGrid],
    beta: f64,
    mode: SwapMode,
    pairing: Pairing,
    exec: Execution,
) -> Result<Vec<Adapted>> {
    beta_sweep(sources, targets, &[beta], mode, pairing, exec)
}

/// Every source adapted at every beta against one paired target; output is
/// ordered source-major.
pub fn beta_sweep(
    sources: &[ImageGrid],
    targets: &[ImageGrid],
    betas: &[f64],
    mode: SwapMode,
    pairing: Pairing,
    exec: Execution,
) -> Result<Vec<Adapted>> {
    let pairs = pair_targets(sources.len(), targets.len(), pairing)?;
    let jobs: Vec<(usize, usize, f64)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(s, &t)| betas.iter().map(move |&b| (s, t, b)))
        .collect();
    exec.try_map(&jobs, |&(s, t, beta)| {
        Ok(Adapted {
            source_index: s,
            target_index: t,
            beta,
            image: spectral_swap(&sources[s], &targets[t], beta, mode)?,
        })
    })
}
