use std::f64::consts::{SQRT_2, TAU};

use serde::{Deserialize, Serialize};

use super::wavelet::ricker_wavelet;
use crate::error::{Error, Result};

/// Fraction of the 2D leapfrog stability limit used for the time step.
pub const CFL_FACTOR: f64 = 0.5;
/// Columns left free at each end of a linear array.
pub const LINEAR_ARRAY_MARGIN: usize = 4;
pub const DEFAULT_CENTRAL_FREQUENCY: f64 = 300e3;
pub const DEFAULT_DURATION: f64 = 60e-6;
/// Below this sampling of the shortest wavelength the solver warns about
/// numerical dispersion.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 10.0;

/// Largest stable time step for the leapfrog scheme.
pub fn stable_time_step(c_max: f64, dx: f64) -> f64 {
    CFL_FACTOR * dx / (c_max * SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Linear,
    Curvilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    #[default]
    Ricker,
}

/// Transducer array and acquisition timing.
///
/// Every element receives on every shot; `source_indices[s]` is the element
/// that emits on shot `s`. Positions are `(row, col)` cells of the physical
/// grid. A `dt` of zero means "pick the stable step" in
/// [`AcquisitionGeometry::fit_time_step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub array_kind: ArrayKind,
    pub element_positions: Vec<(usize, usize)>,
    pub source_indices: Vec<usize>,
    pub central_frequency: f64,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub wavelet: Wavelet,
    pub source_amplitude: f64,
}

impl AcquisitionGeometry {
    pub fn new(array_kind: ArrayKind, element_positions: Vec<(usize, usize)>) -> Self {
        let n = element_positions.len();
        Self {
            array_kind,
            element_positions,
            source_indices: (0..n).collect(),
            central_frequency: DEFAULT_CENTRAL_FREQUENCY,
            duration: DEFAULT_DURATION,
            dt: 0.0,
            wavelet: Wavelet::Ricker,
            source_amplitude: 1.0,
        }
    }

    pub fn with_timing(mut self, central_frequency: f64, duration: f64, dt: f64) -> Self {
        self.central_frequency = central_frequency;
        self.duration = duration;
        self.dt = dt;
        self
    }

    pub fn with_sources(mut self, source_indices: Vec<usize>) -> Self {
        self.source_indices = source_indices;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.source_amplitude = amplitude;
        self
    }

    pub fn num_receivers(&self) -> usize {
        self.element_positions.len()
    }

    pub fn num_shots(&self) -> usize {
        self.source_indices.len()
    }

    pub fn num_steps(&self) -> usize {
        // guard against 1e-16 overshoot turning an exact ratio into an extra step
        ((self.duration / self.dt) * (1.0 - 1e-12)).ceil() as usize + 1
    }

    /// Clamp `dt` to the stability bound for speeds up to `c_max` and return
    /// the effective step.
    pub fn fit_time_step(&mut self, c_max: f64, dx: f64) -> f64 {
        let bound = stable_time_step(c_max, dx);
        if !(self.dt > 0.0) || self.dt > bound {
            self.dt = bound;
        }
        self.dt
    }

    pub fn source_signature(&self) -> Vec<f64> {
        match self.wavelet {
            Wavelet::Ricker => ricker_wavelet(self.central_frequency, self.dt, self.num_steps())
                .into_iter()
                .map(|v| v * self.source_amplitude)
                .collect(),
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.element_positions.is_empty() {
            return Err(Error::invalid("geometry has no elements"));
        }
        if !(self.central_frequency > 0.0) || !(self.duration > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid(
                "central frequency, duration and dt must all be positive",
            ));
        }
        if !self.source_amplitude.is_finite() {
            return Err(Error::invalid("source amplitude must be finite"));
        }
        for &(r, c) in &self.element_positions {
            if r >= height || c >= width {
                return Err(Error::invalid(format!(
                    "element ({r}, {c}) lies outside the {height}x{width} grid"
                )));
            }
        }
        for &s in &self.source_indices {
            if s >= self.element_positions.len() {
                return Err(Error::invalid(format!("source index {s} out of range")));
            }
        }
        Ok(())
    }
}

/// Evenly spaced elements along `depth_row`, first and last at
/// [`LINEAR_ARRAY_MARGIN`] from the edges.
pub fn make_linear_array(
    num_elements: usize,
    depth_row: usize,
    (height, width): (usize, usize),
) -> Result<AcquisitionGeometry> {
    if num_elements < 2 {
        return Err(Error::invalid("a linear array needs at least two elements"));
    }
    if depth_row >= height {
        return Err(Error::invalid(format!(
            "row {depth_row} outside a grid of height {height}"
        )));
    }
    if width < 2 * LINEAR_ARRAY_MARGIN + num_elements {
        return Err(Error::invalid(format!(
            "{num_elements} elements do not fit in width {width}"
        )));
    }
    let first = LINEAR_ARRAY_MARGIN as f64;
    let last = (width - 1 - LINEAR_ARRAY_MARGIN) as f64;
    let pitch = (last - first) / (num_elements - 1) as f64;
    let positions = (0..num_elements)
        .map(|k| (depth_row, (first + k as f64 * pitch).round() as usize))
        .collect();
    Ok(AcquisitionGeometry::new(ArrayKind::Linear, positions))
}

/// Elements evenly spaced in angle on an arc starting at angle 0 (pointing
/// along +col), angles increasing towards +row. A full circle (`arc = 2 pi`)
/// spaces `n` elements by `2 pi / n`; shorter arcs include both endpoints.
pub fn make_curvilinear_array(
    num_elements: usize,
    radius: f64,
    center: (f64, f64),
    arc: f64,
    (height, width): (usize, usize),
) -> Result<AcquisitionGeometry> {
    if num_elements < 2 {
        return Err(Error::invalid("a curvilinear array needs at least two elements"));
    }
    if !(arc > 0.0 && arc <= TAU + 1e-12) {
        return Err(Error::invalid(format!("arc {arc} outside (0, 2 pi]")));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let full = (arc - TAU).abs() < 1e-9;
    let step = if full {
        TAU / num_elements as f64
    } else {
        arc / (num_elements - 1) as f64
    };
    let mut positions = Vec::with_capacity(num_elements);
    for k in 0..num_elements {
        let theta = k as f64 * step;
        let r = (center.0 + radius * theta.sin()).round();
        let c = (center.1 + radius * theta.cos()).round();
        if r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
            return Err(Error::invalid(format!(
                "element {k} at ({r}, {c}) falls outside the {height}x{width} grid"
            )));
        }
        positions.push((r as usize, c as usize));
    }
    Ok(AcquisitionGeometry::new(ArrayKind::Curvilinear, positions))
}

/// Angles used by [`make_curvilinear_array`]; exposed for tests and reports.
pub fn curvilinear_angles(num_elements: usize, arc: f64) -> Vec<f64> {
    let full = (arc - TAU).abs() < 1e-9;
    let step = if full {
        TAU / num_elements as f64
    } else {
        arc / (num_elements - 1) as f64
    };
    (0..num_elements).map(|k| k as f64 * step).collect()
}
