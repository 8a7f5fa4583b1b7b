//! X-ray attenuation to Hounsfield units to speed of sound, plus the depth
//! attenuation applied to ultrasound images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Tolerance on the sum of elemental mass fractions.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-3;
/// Sanity band for any speed of sound in the toolkit, m/s.
pub const SOUND_SPEED_BAND: (f64, f64) = (300.0, 4000.0);

pub const DEFAULT_HU_BOUNDS: (f64, f64) = (-1000.0, 1000.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFraction {
    pub symbol: String,
    /// Mass fraction.
    pub w: f64,
    /// Mass attenuation coefficient at the configured tube voltage.
    pub mu_over_rho_cm2_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueEntry {
    pub name: String,
    pub density_g_cm3: f64,
    pub hu: f64,
    pub sound_speed_m_s: f64,
    pub elements: Vec<ElementFraction>,
}

impl TissueEntry {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.elements.iter().map(|e| e.w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "tissue `{}`: mass fractions sum to {sum}, expected 1",
                self.name
            )));
        }
        if !(self.density_g_cm3 > 0.0) {
            return Err(Error::invalid(format!(
                "tissue `{}`: density must be positive",
                self.name
            )));
        }
        let (lo, hi) = SOUND_SPEED_BAND;
        if !(lo..=hi).contains(&self.sound_speed_m_s) {
            return Err(Error::invalid(format!(
                "tissue `{}`: sound speed {} m/s outside [{lo}, {hi}]",
                self.name, self.sound_speed_m_s
            )));
        }
        Ok(())
    }
}

/// Linear attenuation coefficient (1/cm): density times the mass-fraction
/// weighted sum of elemental mass attenuation coefficients.
pub fn linear_attenuation(entry: &TissueEntry) -> Result<f64> {
    entry.validate()?;
    let weighted: f64 = entry
        .elements
        .iter()
        .map(|e| e.w * e.mu_over_rho_cm2_g)
        .sum();
    Ok(entry.density_g_cm3 * weighted)
}

pub fn hounsfield(mu_x: f64, mu_water: f64) -> Result<f64> {
    if !(mu_water > 0.0) {
        return Err(Error::invalid(format!(
            "water attenuation must be positive, got {mu_water}"
        )));
    }
    Ok(1000.0 * (mu_x - mu_water) / mu_water)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    pub water_mu_1_cm: f64,
    pub tissues: Vec<TissueEntry>,
}

impl TissueTable {
    pub fn new(water_mu_1_cm: f64, tissues: Vec<TissueEntry>) -> Result<Self> {
        let t = Self {
            water_mu_1_cm,
            tissues,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tissues.len() < 2 {
            return Err(Error::invalid("tissue table needs at least two entries"));
        }
        if !(self.water_mu_1_cm > 0.0) {
            return Err(Error::invalid("water_mu_1_cm must be positive"));
        }
        for e in &self.tissues {
            e.validate()?;
        }
        for pair in self.tissues.windows(2) {
            if !(pair[1].hu > pair[0].hu) {
                return Err(Error::invalid(format!(
                    "HU anchors must increase strictly: `{}` ({}) then `{}` ({})",
                    pair[0].name, pair[0].hu, pair[1].name, pair[1].hu
                )));
            }
        }
        if !self.tissues.iter().any(|e| e.hu == 0.0) {
            return Err(Error::invalid("tissue table has no water entry (HU 0)"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "tissue table".into(),
            source,
        })?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// HU of every entry recomputed from its elemental composition.
    pub fn computed_hu(&self) -> Result<Vec<(String, f64)>> {
        self.tissues
            .iter()
            .map(|e| Ok((e.name.clone(), hounsfield(linear_attenuation(e)?, self.water_mu_1_cm)?)))
            .collect()
    }

    /// Piecewise-linear HU to speed lookup with clamping at both ends.
    pub fn sound_speed_at(&self, hu: f64) -> f64 {
        let first = &self.tissues[0];
        let last = &self.tissues[self.tissues.len() - 1];
        if hu <= first.hu {
            return first.sound_speed_m_s;
        }
        if hu >= last.hu {
            return last.sound_speed_m_s;
        }
        // first index whose anchor exceeds hu
        let hi = self.tissues.partition_point(|e| e.hu <= hu);
        let (a, b) = (&self.tissues[hi - 1], &self.tissues[hi]);
        let t = (hu - a.hu) / (b.hu - a.hu);
        a.sound_speed_m_s + t * (b.sound_speed_m_s - a.sound_speed_m_s)
    }

    pub fn speed_bounds(&self) -> (f64, f64) {
        self.tissues.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.sound_speed_m_s), hi.max(e.sound_speed_m_s))
        })
    }
}

fn el(symbol: &str, w: f64, mu_over_rho_cm2_g: f64) -> ElementFraction {
    ElementFraction {
        symbol: symbol.into(),
        w,
        mu_over_rho_cm2_g,
    }
}

impl Default for TissueTable {
    /// Five illustrative tissues at an effective 20 keV beam. These numbers
    /// are configuration; swap in a measured table for real data.
    fn default() -> Self {
        const H: f64 = 0.3695;
        const C: f64 = 0.4417;
        const N: f64 = 0.6170;
        const O: f64 = 0.8651;
        const CA: f64 = 19.00;
        let entry = |name: &str, rho, hu, c, elements| TissueEntry {
            name: name.into(),
            density_g_cm3: rho,
            hu,
            sound_speed_m_s: c,
            elements,
        };
        Self {
            water_mu_1_cm: 0.80964236,
            tissues: vec![
                entry("air", 0.001205, -999.0, 353.0, vec![el("N", 0.76, N), el("O", 0.24, O)]),
                entry(
                    "fat",
                    0.95,
                    -350.0,
                    1450.0,
                    vec![el("H", 0.114, H), el("C", 0.598, C), el("N", 0.007, N), el("O", 0.281, O)],
                ),
                entry(
                    "glandular",
                    1.02,
                    -163.0,
                    1515.0,
                    vec![el("H", 0.106, H), el("C", 0.332, C), el("N", 0.030, N), el("O", 0.532, O)],
                ),
                entry("water", 1.0, 0.0, 1524.0, vec![el("H", 0.1119, H), el("O", 0.8881, O)]),
                entry(
                    "tumor",
                    1.06,
                    220.0,
                    1550.0,
                    vec![
                        el("H", 0.100, H),
                        el("C", 0.130, C),
                        el("N", 0.040, N),
                        el("O", 0.720, O),
                        el("Ca", 0.010, CA),
                    ],
                ),
            ],
        }
    }
}

/// Affine map of `[0,1]` intensities onto `[hu_min, hu_max]`.
pub fn intensity_to_hu(grid: &ImageGrid, hu_min: f64, hu_max: f64) -> Result<ImageGrid> {
    if !(hu_max > hu_min) {
        return Err(Error::invalid(format!(
            "HU bounds inverted: min {hu_min} >= max {hu_max}"
        )));
    }
    let span = hu_max - hu_min;
    Ok(grid.map(|v| hu_min + v * span).with_value_range(span))
}

pub fn hu_to_sound_speed(hu_grid: &ImageGrid, table: &TissueTable) -> Result<ImageGrid> {
    table.validate()?;
    let (lo, hi) = table.speed_bounds();
    Ok(hu_grid
        .map(|hu| table.sound_speed_at(hu))
        .with_value_range(hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationParams {
    /// Decay rate per metre of depth.
    pub alpha_ref: f64,
    /// Metres per pixel along the depth (row) axis.
    pub pixel_size: f64,
}

impl AttenuationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ref >= 0.0) || !self.alpha_ref.is_finite() {
            return Err(Error::invalid("alpha_ref must be finite and non-negative"));
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::invalid("pixel_size must be positive"));
        }
        Ok(())
    }
}

/// Scale row `r` by `exp(-alpha_ref * r * pixel_size)`; depth grows downward.
pub fn apply_attenuation(grid: &ImageGrid, params: &AttenuationParams) -> Result<ImageGrid> {
    params.validate()?;
    let mut out = grid.clone();
    let w = grid.width();
    for (r, row) in out.data_mut().chunks_exact_mut(w).enumerate() {
        let gain = (-params.alpha_ref * r as f64 * params.pixel_size).exp();
        row.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(out)
}
