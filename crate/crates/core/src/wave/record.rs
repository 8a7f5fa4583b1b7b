use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Receiver traces for every shot, laid out `[shot][receiver][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    num_shots: usize,
    num_receivers: usize,
    num_steps: usize,
    dt: f64,
    data: Vec<f64>,
}

impl ShotRecord {
    pub fn zeros(num_shots: usize, num_receivers: usize, num_steps: usize, dt: f64) -> Self {
        Self {
            num_shots,
            num_receivers,
            num_steps,
            dt,
            data: vec![0.0; num_shots * num_receivers * num_steps],
        }
    }

    pub fn from_shots(shots: Vec<Vec<f64>>, num_receivers: usize, num_steps: usize, dt: f64) -> Result<Self> {
        let per_shot = num_receivers * num_steps;
        if shots.iter().any(|s| s.len() != per_shot) {
            return Err(Error::invalid("shot trace block has the wrong length"));
        }
        Ok(Self {
            num_shots: shots.len(),
            num_receivers,
            num_steps,
            dt,
            data: shots.concat(),
        })
    }

    pub fn num_shots(&self) -> usize {
        self.num_shots
    }

    pub fn num_receivers(&self) -> usize {
        self.num_receivers
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// All receiver traces of one shot, `[receiver][time]`.
    pub fn shot(&self, shot: usize) -> &[f64] {
        let n = self.num_receivers * self.num_steps;
        &self.data[shot * n..(shot + 1) * n]
    }

    pub fn trace(&self, shot: usize, receiver: usize) -> &[f64] {
        let start = (shot * self.num_receivers + receiver) * self.num_steps;
        &self.data[start..start + self.num_steps]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_shots == other.num_shots
            && self.num_receivers == other.num_receivers
            && self.num_steps == other.num_steps
    }

    /// One row per (shot, receiver), one column per time sample; suitable for
    /// the f32-raw container.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::new(self.num_shots * self.num_receivers, self.num_steps, self.data.clone())
            .expect("record shape is consistent")
    }

    pub fn from_grid(grid: &ImageGrid, num_shots: usize, dt: f64) -> Result<Self> {
        if num_shots == 0 || grid.height() % num_shots != 0 {
            return Err(Error::invalid(format!(
                "{} trace rows cannot be split into {num_shots} shots",
                grid.height()
            )));
        }
        Ok(Self {
            num_shots,
            num_receivers: grid.height() / num_shots,
            num_steps: grid.width(),
            dt,
            data: grid.data().to_vec(),
        })
    }

    /// Inner product over every sample.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
