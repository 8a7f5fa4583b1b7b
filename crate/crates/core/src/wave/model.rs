use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::tissue::SOUND_SPEED_BAND;

/// Speed-of-sound model on an isotropic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    speed: ImageGrid,
    grid_spacing: f64,
}

impl AcousticModel {
    pub fn new(speed: ImageGrid, grid_spacing: f64) -> Result<Self> {
        if !(grid_spacing > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let (lo, hi) = SOUND_SPEED_BAND;
        if let Some(bad) = speed.data().iter().find(|&&c| !(lo..=hi).contains(&c)) {
            return Err(Error::invalid(format!(
                "speed {bad} m/s outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            speed,
            grid_spacing,
        })
    }

    /// Build from squared slowness `m = 1 / c^2`.
    pub fn from_slowness_sq(m: &ImageGrid, grid_spacing: f64) -> Result<Self> {
        if m.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("squared slowness must be positive"));
        }
        Self::new(m.map(|v| 1.0 / v.sqrt()), grid_spacing)
    }

    pub fn homogeneous(height: usize, width: usize, speed: f64, grid_spacing: f64) -> Result<Self> {
        Self::new(ImageGrid::filled(height, width, speed), grid_spacing)
    }

    pub fn speed(&self) -> &ImageGrid {
        &self.speed
    }

    pub fn into_speed(self) -> ImageGrid {
        self.speed
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    pub fn dims(&self) -> (usize, usize) {
        self.speed.dims()
    }

    pub fn slowness_sq(&self) -> ImageGrid {
        self.speed.map(|c| 1.0 / (c * c))
    }

    pub fn max_speed(&self) -> f64 {
        self.speed.max()
    }

    pub fn min_speed(&self) -> f64 {
        self.speed.min()
    }
}
