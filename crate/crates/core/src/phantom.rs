//! Synthetic phantoms standing in for clinical data.
//!
//! Speed-of-sound phantoms are in m/s; the breast-like phantom is an X-ray
//! intensity image in `[0, 1]` whose tissue levels map, through the default
//! affine HU calibration, onto the default tissue table.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const MIN_PHANTOM_SIZE: usize = 32;

pub const BACKGROUND_SPEED: f64 = 1500.0;
pub const SLOW_INCLUSION_SPEED: f64 = 1450.0;
pub const FAST_INCLUSION_SPEED: f64 = 1600.0;
pub const LAYER_SPEEDS: [f64; 4] = [1480.0, 1520.0, 1560.0, 1500.0];

/// Intensities matching water, fat, glandular and tumor under the
/// `[-1000, 1000]` HU calibration.
pub const WATER_INTENSITY: f64 = 0.5;
pub const FAT_INTENSITY: f64 = 0.325;
pub const GLANDULAR_INTENSITY: f64 = 0.4185;
pub const TUMOR_INTENSITY: f64 = 0.61;
pub const INTENSITY_NOISE: f64 = 0.004;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    TwoInclusion,
    Layered,
    BreastLike,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-inclusion" => Ok(Self::TwoInclusion),
            "layered" => Ok(Self::Layered),
            "breast-like" => Ok(Self::BreastLike),
            other => Err(Error::invalid(format!(
                "unknown phantom `{other}` (expected two-inclusion, layered or breast-like)"
            ))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoInclusion => "two-inclusion",
            Self::Layered => "layered",
            Self::BreastLike => "breast-like",
        })
    }
}

impl PhantomKind {
    /// True when the phantom is a speed map rather than an intensity image.
    pub fn is_speed(self) -> bool {
        !matches!(self, Self::BreastLike)
    }
}

pub fn phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<ImageGrid> {
    if size < MIN_PHANTOM_SIZE {
        return Err(Error::invalid(format!(
            "phantom size {size} is below the minimum of {MIN_PHANTOM_SIZE}"
        )));
    }
    Ok(match kind {
        PhantomKind::TwoInclusion => two_inclusion(size),
        PhantomKind::Layered => layered(size, seed),
        PhantomKind::BreastLike => breast_like(size, seed),
    })
}

fn inside_disc(r: usize, c: usize, center: (f64, f64), radius: f64) -> bool {
    let dr = r as f64 - center.0;
    let dc = c as f64 - center.1;
    dr * dr + dc * dc <= radius * radius
}

/// Background 1500 m/s with a slow disc (upper left) and a fast disc (lower
/// right), both of radius `0.12 n`, kept inside a ring of radius `0.42 n`.
pub fn two_inclusion(size: usize) -> ImageGrid {
    let n = size as f64;
    let slow = (0.40 * n, 0.35 * n);
    let fast = (0.60 * n, 0.65 * n);
    let radius = 0.12 * n;
    ImageGrid::from_fn(size, size, |r, c| {
        if inside_disc(r, c, slow, radius) {
            SLOW_INCLUSION_SPEED
        } else if inside_disc(r, c, fast, radius) {
            FAST_INCLUSION_SPEED
        } else {
            BACKGROUND_SPEED
        }
    })
}

/// Four horizontal layers with seeded sinusoidal interfaces.
pub fn layered(size: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let interfaces: Vec<(f64, f64, f64)> = (1..LAYER_SPEEDS.len())
        .map(|k| {
            let depth = n * k as f64 / LAYER_SPEEDS.len() as f64;
            let amplitude = rng.gen_range(0.0..0.04) * n;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (depth, amplitude, phase)
        })
        .collect();
    ImageGrid::from_fn(size, size, |r, c| {
        let x = std::f64::consts::TAU * c as f64 / n;
        let layer = interfaces
            .iter()
            .filter(|&&(depth, amp, phase)| r as f64 >= depth + amp * (x + phase).sin())
            .count();
        LAYER_SPEEDS[layer]
    })
}

/// Half-ellipse breast outline in water coupling, fatty background with
/// seeded glandular blobs and one tumor disc, plus mild Gaussian noise.
pub fn breast_like(size: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let outline = |r: f64, c: f64| {
        let dr = (r - 0.5 * n) / (0.45 * n);
        let dc = c / (0.8 * n);
        dr * dr + dc * dc <= 1.0
    };
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let cr = rng.gen_range(0.25..0.75) * n;
            let cc = rng.gen_range(0.1..0.5) * n;
            let a = rng.gen_range(0.05..0.12) * n;
            let b = rng.gen_range(0.04..0.09) * n;
            (cr, cc, a, b)
        })
        .collect();
    let tumor_center = (rng.gen_range(0.35..0.65) * n, rng.gen_range(0.2..0.45) * n);
    let tumor_radius = 0.06 * n;
    let noise = Normal::new(0.0, INTENSITY_NOISE).expect("positive standard deviation");

    let mut grid = ImageGrid::from_fn(size, size, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        if !outline(rf, cf) {
            WATER_INTENSITY
        } else if inside_disc(r, c, tumor_center, tumor_radius) {
            TUMOR_INTENSITY
        } else if blobs.iter().any(|&(cr, cc, a, b)| {
            let u = (rf - cr) / a;
            let v = (cf - cc) / b;
            u * u + v * v <= 1.0
        }) {
            GLANDULAR_INTENSITY
        } else {
            FAT_INTENSITY
        }
    });
    for v in grid.data_mut() {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    grid
}

/// Ultrasound-like speckle in `[0, 1]`: Rayleigh magnitude of two smoothed
/// Gaussian fields, scaled by its maximum.
pub fn speckle_texture(height: usize, width: usize, seed: u64) -> Result<ImageGrid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("speckle dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut field = || ImageGrid::from_fn(height, width, |_, _| normal.sample(&mut rng)).gaussian_blur(1.0);
    let re = field();
    let im = field();
    let mag = re.zip_map(&im, f64::hypot)?;
    let peak = mag.max();
    Ok(if peak > 0.0 { mag.map(|v| v / peak) } else { mag })
}

/// Number of local maxima above `min_fraction` of the peak in a
/// `bins`-bin histogram of `grid` over `[lo, hi]`.
pub fn histogram_modes(grid: &ImageGrid, bins: usize, lo: f64, hi: f64, min_fraction: f64) -> usize {
    let mut hist = vec![0usize; bins];
    for &v in grid.data() {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
        if k >= 0.0 && (k as usize) < bins {
            hist[k as usize] += 1;
        }
    }
    let peak = *hist.iter().max().unwrap_or(&0) as f64;
    let floor = peak * min_fraction;
    (0..bins)
        .filter(|&k| {
            let h = hist[k];
            let left = if k > 0 { hist[k - 1] } else { 0 };
            let right = if k + 1 < bins { hist[k + 1] } else { 0 };
            h as f64 > floor && h > left && h >= right
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_inclusion_values() {
        let g = phantom(PhantomKind::TwoInclusion, 64, 0).unwrap();
        assert_eq!(g.dims(), (64, 64));
        let mut counts = std::collections::BTreeMap::new();
        for &v in g.data() {
            *counts.entry(v as i64).or_insert(0usize) += 1;
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![1450, 1500, 1600]);
        assert_eq!(g.get(0, 0), 1500.0);
        assert_eq!(g.get(26, 22), 1450.0);
        assert_eq!(g.get(38, 42), 1600.0);
        assert_eq!(counts[&1450], counts[&1600]);
    }

    #[test]
    fn seeds_reproduce() {
        for kind in [PhantomKind::TwoInclusion, PhantomKind::Layered, PhantomKind::BreastLike] {
            assert_eq!(phantom(kind, 48, 5).unwrap(), phantom(kind, 48, 5).unwrap());
        }
        assert_ne!(breast_like(48, 1), breast_like(48, 2));
        assert_eq!(speckle_texture(32, 32, 3).unwrap(), speckle_texture(32, 32, 3).unwrap());
    }

    #[test]
    fn rejects_small_sizes() {
        assert!(phantom(PhantomKind::Layered, 31, 0).is_err());
        assert!("disc".parse::<PhantomKind>().is_err());
        assert_eq!("breast-like".parse::<PhantomKind>().unwrap(), PhantomKind::BreastLike);
    }

    #[test]
    fn layered_is_monotone_in_layer_index() {
        let g = layered(64, 9);
        assert_eq!(g.get(0, 10), LAYER_SPEEDS[0]);
        assert_eq!(g.get(63, 10), LAYER_SPEEDS[3]);
        assert!(g.data().iter().all(|v| LAYER_SPEEDS.contains(v)));
    }

    #[test]
    fn breast_like_has_tissue_modes() {
        for seed in 0..4 {
            let g = breast_like(64, seed);
            assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(histogram_modes(&g, 64, 0.0, 1.0, 0.01) >= 3, "seed {seed}");
        }
    }

    #[test]
    fn speckle_range() {
        let s = speckle_texture(40, 24, 11).unwrap();
        assert_eq!(s.dims(), (40, 24));
        assert_eq!(s.max(), 1.0);
        assert!(s.min() >= 0.0);
    }

    #[test]
    fn histogram_mode_counting() {
        let g = ImageGrid::new(1, 6, vec![0.05, 0.05, 0.5, 0.5, 0.95, 0.95]).unwrap();
        assert_eq!(histogram_modes(&g, 10, 0.0, 1.0, 0.0), 3);
        let flat = ImageGrid::filled(4, 4, 0.3);
        assert_eq!(histogram_modes(&flat, 10, 0.0, 1.0, 0.0), 1);
    }
}
