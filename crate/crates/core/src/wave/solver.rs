use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geometry::{stable_time_step, AcquisitionGeometry, MIN_POINTS_PER_WAVELENGTH};
use super::model::AcousticModel;
use super::record::ShotRecord;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::ImageGrid;

pub const DEFAULT_SPONGE_WIDTH: usize = 40;
/// A field exceeding this multiple of the source amplitude is treated as a
/// numerical blow-up.
pub const STABILITY_CEILING: f64 = 1e6;

// Fourth-order centered second derivative, summed over both axes.
const LAP_CENTER: f64 = -5.0;
const LAP_NEAR: f64 = 4.0 / 3.0;
const LAP_FAR: f64 = -1.0 / 12.0;

const BLOWUP_CHECK_INTERVAL: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Sponge thickness in cells on every side of the physical grid.
    pub sponge_width: usize,
    /// Nominal amplitude reflection of the sponge; sets the peak damping.
    pub sponge_reflection: f64,
    /// Keep every n-th forward wavefield for the adjoint (1 = all).
    pub snapshot_stride: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            sponge_width: DEFAULT_SPONGE_WIDTH,
            sponge_reflection: 1e-3,
            snapshot_stride: 1,
        }
    }
}

/// Pressure field on the padded computational grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefieldSnapshot {
    pub time_index: usize,
    pub field: ImageGrid,
}

#[derive(Debug, Clone)]
pub struct ShotOutput {
    /// `[receiver][time]`.
    pub traces: Vec<f64>,
    pub snapshots: Option<Vec<WavefieldSnapshot>>,
}

/// Discretized wave operator for one model and acquisition.
///
/// Every solve advances
///
/// ```text
/// (m + a) u[n+1] = (2m + dt^2 L) u[n] - (m - a) u[n-1] + f[n]
/// ```
///
/// where `L` is the symmetric fourth-order Laplacian, `a = m sigma dt / 2`
/// is the sponge damping and `f` the injected term. Forward, linearized
/// (Born) and adjoint solves all share this recursion; the adjoint runs it
/// backwards in time, which makes it the exact transpose of the discrete
/// forward map.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    geometry: AcquisitionGeometry,
    settings: SolverSettings,
    height: usize,
    width: usize,
    pad: usize,
    ny: usize,
    nx: usize,
    dt: f64,
    num_steps: usize,
    dt2_over_dx2: f64,
    two_m: Vec<f64>,
    m_minus_a: Vec<f64>,
    inv_m_plus_a: Vec<f64>,
    receivers: Vec<usize>,
    signature: Vec<f64>,
    ceiling: f64,
}

impl WaveSolver {
    pub fn new(
        model: &AcousticModel,
        geometry: &AcquisitionGeometry,
        settings: &SolverSettings,
    ) -> Result<Self> {
        let (height, width) = model.dims();
        geometry.validate(height, width)?;
        if settings.sponge_width < 2 {
            return Err(Error::invalid("sponge width must be at least 2 cells"));
        }
        if settings.snapshot_stride == 0 {
            return Err(Error::invalid("snapshot stride must be at least 1"));
        }
        if !(settings.sponge_reflection > 0.0 && settings.sponge_reflection < 1.0) {
            return Err(Error::invalid("sponge reflection must lie in (0, 1)"));
        }
        let dx = model.grid_spacing();
        let max_dt = stable_time_step(model.max_speed(), dx);
        if geometry.dt > max_dt * (1.0 + 1e-12) {
            return Err(Error::CflViolation {
                dt: geometry.dt,
                max_dt,
            });
        }
        let ppw = model.min_speed() / (geometry.central_frequency * dx);
        if ppw < MIN_POINTS_PER_WAVELENGTH {
            log::warn!(
                "{ppw:.1} points per wavelength at {} Hz; expect numerical dispersion",
                geometry.central_frequency
            );
        }

        let pad = settings.sponge_width;
        let ny = height + 2 * pad;
        let nx = width + 2 * pad;
        let dt = geometry.dt;

        // sponge profile: raised cosine from 0 at the physical edge to sigma_max
        let c_max = model.max_speed();
        let sigma_max = 3.0 * c_max * (1.0 / settings.sponge_reflection).ln() / (2.0 * pad as f64 * dx);
        let ramp = |p: usize, n: usize| -> f64 {
            let depth = if p < pad {
                pad - p
            } else if p >= pad + n {
                p + 1 - (pad + n)
            } else {
                0
            };
            let x = depth as f64 / pad as f64;
            0.5 * (1.0 - (PI * x).cos())
        };

        let speed = model.speed();
        let cells = ny * nx;
        let mut two_m = vec![0.0; cells];
        let mut m_minus_a = vec![0.0; cells];
        let mut inv_m_plus_a = vec![0.0; cells];
        for r in 0..ny {
            let pr = r.saturating_sub(pad).min(height - 1);
            let sr = ramp(r, height);
            for c in 0..nx {
                let pc = c.saturating_sub(pad).min(width - 1);
                let v = speed.get(pr, pc);
                let m = 1.0 / (v * v);
                let sigma = sigma_max * (sr + ramp(c, width));
                let a = m * sigma * dt / 2.0;
                let i = r * nx + c;
                two_m[i] = 2.0 * m;
                m_minus_a[i] = m - a;
                inv_m_plus_a[i] = 1.0 / (m + a);
            }
        }

        let receivers = geometry
            .element_positions
            .iter()
            .map(|&(r, c)| (r + pad) * nx + c + pad)
            .collect();
        let amp = geometry.source_amplitude.abs();
        Ok(Self {
            geometry: geometry.clone(),
            settings: settings.clone(),
            height,
            width,
            pad,
            ny,
            nx,
            dt,
            num_steps: geometry.num_steps(),
            dt2_over_dx2: dt * dt / (dx * dx),
            two_m,
            m_minus_a,
            inv_m_plus_a,
            receivers,
            signature: geometry.source_signature(),
            ceiling: STABILITY_CEILING * if amp > 0.0 { amp } else { 1.0 },
        })
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geometry
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Padded grid dimensions `(rows, cols)`.
    pub fn padded_dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// Offset of the physical grid inside the padded grid.
    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Cut the physical region out of a padded field.
    pub fn physical_region(&self, padded: &ImageGrid) -> ImageGrid {
        ImageGrid::from_fn(self.height, self.width, |r, c| {
            padded.get(r + self.pad, c + self.pad)
        })
    }

    fn physical_slowness(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| 0.5 * self.two_m[self.phys_index(r, c)]))
    }

    #[inline]
    fn phys_index(&self, r: usize, c: usize) -> usize {
        (r + self.pad) * self.nx + c + self.pad
    }

    /// One leapfrog update of every interior cell; the outer two rings stay
    /// zero so `L` is symmetric.
    fn step(&self, prev: &[f64], cur: &[f64], next: &mut [f64]) {
        let nx = self.nx;
        let k = self.dt2_over_dx2;
        for r in 2..self.ny - 2 {
            let row = r * nx;
            for i in row + 2..row + nx - 2 {
                let lap = LAP_CENTER * cur[i]
                    + LAP_NEAR * (cur[i - 1] + cur[i + 1] + cur[i - nx] + cur[i + nx])
                    + LAP_FAR * (cur[i - 2] + cur[i + 2] + cur[i - 2 * nx] + cur[i + 2 * nx]);
                next[i] = (self.two_m[i] * cur[i] + k * lap - self.m_minus_a[i] * prev[i])
                    * self.inv_m_plus_a[i];
            }
        }
    }

    fn check_field(&self, field: &[f64], step: usize) -> Result<()> {
        self.check_field_against(field, step, self.ceiling)
    }

    fn check_field_against(&self, field: &[f64], step: usize, ceiling: f64) -> Result<()> {
        if field.iter().any(|v| !v.is_finite() || v.abs() > ceiling) {
            return Err(Error::NumericalBlowup { step });
        }
        Ok(())
    }

    fn copy_physical(&self, field: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.height {
            let start = self.phys_index(r, 0);
            out.extend_from_slice(&field[start..start + self.width]);
        }
    }

    fn source_cell(&self, shot: usize) -> Result<usize> {
        let element = *self
            .geometry
            .source_indices
            .get(shot)
            .ok_or_else(|| Error::invalid(format!("shot {shot} out of range")))?;
        Ok(self.receivers[element])
    }

    /// Forward solve for one shot. With `keep_history` the physical part of
    /// every `snapshot_stride`-th field is returned for the adjoint.
    fn run_forward(
        &self,
        shot: usize,
        keep_history: bool,
        keep_snapshots: bool,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<WavefieldSnapshot>)> {
        let src = self.source_cell(shot)?;
        let nt = self.num_steps;
        let nr = self.receivers.len();
        let stride = self.settings.snapshot_stride;
        let cells = self.ny * self.nx;
        let mut prev = vec![0.0; cells];
        let mut cur = vec![0.0; cells];
        let mut next = vec![0.0; cells];
        let mut traces = vec![0.0; nr * nt];
        let mut history = Vec::new();
        let mut snapshots = Vec::new();
        if keep_history {
            history.push(vec![0.0; self.height * self.width]);
        }
        if keep_snapshots {
            snapshots.push(self.snapshot(&cur, 0));
        }
        let src_gain = self.dt2_over_dx2 * self.inv_m_plus_a[src];
        for n in 0..nt - 1 {
            self.step(&prev, &cur, &mut next);
            next[src] += src_gain * self.signature[n];
            for (k, &rc) in self.receivers.iter().enumerate() {
                traces[k * nt + n + 1] = next[rc];
            }
            if (n + 1) % BLOWUP_CHECK_INTERVAL == 0 || n + 2 == nt {
                self.check_field(&next, n + 1)?;
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
            if (n + 1) % stride == 0 {
                if keep_history {
                    let mut buf = Vec::with_capacity(self.height * self.width);
                    self.copy_physical(&cur, &mut buf);
                    history.push(buf);
                }
                if keep_snapshots {
                    snapshots.push(self.snapshot(&cur, n + 1));
                }
            }
        }
        Ok((traces, history, snapshots))
    }

    fn snapshot(&self, field: &[f64], time_index: usize) -> WavefieldSnapshot {
        WavefieldSnapshot {
            time_index,
            field: ImageGrid::new(self.ny, self.nx, field.to_vec()).expect("padded dims"),
        }
    }

    pub fn forward(&self, shot: usize, record_wavefield: bool) -> Result<ShotOutput> {
        let (traces, _, snaps) = self.run_forward(shot, false, record_wavefield)?;
        Ok(ShotOutput {
            traces,
            snapshots: record_wavefield.then_some(snaps),
        })
    }

    /// Every shot, one emitter at a time, all elements receiving.
    pub fn simulate(&self, exec: Execution) -> Result<ShotRecord> {
        let shots: Vec<usize> = (0..self.geometry.num_shots()).collect();
        let blocks = exec.try_map(&shots, |&s| self.forward(s, false).map(|o| o.traces))?;
        ShotRecord::from_shots(blocks, self.receivers.len(), self.num_steps, self.dt)
    }

    /// Backward recursion driven by `adjoint_source` (`[receiver][time]`),
    /// correlated with the stored forward history. Returns the physical-grid
    /// sensitivity `-sum_t u[t] * nu_tt[t]`, `nu_tt` being the undivided
    /// second time difference of the adjoint field.
    fn run_adjoint(&self, history: &[Vec<f64>], adjoint_source: &[f64]) -> Result<Vec<f64>> {
        let nt = self.num_steps;
        let stride = self.settings.snapshot_stride;
        let cells = self.ny * self.nx;
        let mut later = vec![0.0; cells]; // nu[k+1]
        let mut cur = vec![0.0; cells]; // nu[k]
        let mut earlier = vec![0.0; cells]; // nu[k-1]
        let mut grad = vec![0.0; self.height * self.width];
        // adjoint amplitudes follow the data scale, not the source scale
        let injected = adjoint_source.iter().fold(0.0f64, |m, v| m.max(v.abs())) / self.dt2_over_dx2;
        let ceiling = STABILITY_CEILING * if injected > 0.0 { injected } else { 1.0 };
        for k in (1..nt).rev() {
            self.step(&later, &cur, &mut earlier);
            for (j, &rc) in self.receivers.iter().enumerate() {
                earlier[rc] += adjoint_source[j * nt + k] * self.inv_m_plus_a[rc];
            }
            if k % BLOWUP_CHECK_INTERVAL == 0 || k == 1 {
                self.check_field_against(&earlier, k - 1, ceiling)?;
            }
            if k % stride == 0 {
                let u = &history[k / stride];
                let weight = stride as f64;
                for r in 0..self.height {
                    let base = self.phys_index(r, 0);
                    let g_row = &mut grad[r * self.width..(r + 1) * self.width];
                    let u_row = &u[r * self.width..(r + 1) * self.width];
                    for c in 0..self.width {
                        let i = base + c;
                        let nu_tt = earlier[i] - 2.0 * cur[i] + later[i];
                        g_row[c] -= weight * u_row[c] * nu_tt;
                    }
                }
            }
            std::mem::swap(&mut later, &mut cur);
            std::mem::swap(&mut cur, &mut earlier);
        }
        Ok(grad)
    }

    /// Misfit `0.5 |P u - d|^2` for one shot and its gradient with respect
    /// to squared slowness on the physical grid.
    pub fn misfit_gradient(&self, shot: usize, observed: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (traces, history, _) = self.run_forward(shot, true, false)?;
        if observed.len() != traces.len() {
            return Err(Error::invalid("observed traces do not match the geometry"));
        }
        let residual: Vec<f64> = traces.iter().zip(observed).map(|(u, d)| u - d).collect();
        let misfit = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
        let grad = self.run_adjoint(&history, &residual)?;
        Ok((misfit, grad))
    }

    /// Transpose of the Jacobian of the traces of `shot` with respect to
    /// squared slowness, applied to `data` (`[receiver][time]`).
    pub fn jacobian_transpose(&self, shot: usize, data: &[f64]) -> Result<Vec<f64>> {
        let (traces, history, _) = self.run_forward(shot, true, false)?;
        if data.len() != traces.len() {
            return Err(Error::invalid("data does not match the geometry"));
        }
        self.run_adjoint(&history, data)
    }

    /// Linearized (Born) traces for a squared-slowness perturbation `dm`
    /// on the physical grid: the Jacobian applied to `dm`.
    pub fn born(&self, shot: usize, dm: &[f64]) -> Result<Vec<f64>> {
        if dm.len() != self.height * self.width {
            return Err(Error::invalid("perturbation does not match the model grid"));
        }
        let src = self.source_cell(shot)?;
        let nt = self.num_steps;
        let nr = self.receivers.len();
        let cells = self.ny * self.nx;
        let (mut u_prev, mut u_cur, mut u_next) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        let (mut d_prev, mut d_cur, mut d_next) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        let mut traces = vec![0.0; nr * nt];
        let src_gain = self.dt2_over_dx2 * self.inv_m_plus_a[src];
        let rel = dm
            .iter()
            .zip(self.physical_slowness())
            .fold(0.0f64, |acc, (d, m)| acc.max((d / m).abs()));
        let ceiling = self.ceiling * rel.max(1.0);
        for n in 0..nt - 1 {
            self.step(&u_prev, &u_cur, &mut u_next);
            u_next[src] += src_gain * self.signature[n];
            self.step(&d_prev, &d_cur, &mut d_next);
            for r in 0..self.height {
                let base = self.phys_index(r, 0);
                for c in 0..self.width {
                    let i = base + c;
                    let u_tt = u_next[i] - 2.0 * u_cur[i] + u_prev[i];
                    d_next[i] -= dm[r * self.width + c] * u_tt * self.inv_m_plus_a[i];
                }
            }
            for (k, &rc) in self.receivers.iter().enumerate() {
                traces[k * nt + n + 1] = d_next[rc];
            }
            if (n + 1) % BLOWUP_CHECK_INTERVAL == 0 {
                self.check_field_against(&d_next, n + 1, ceiling)?;
            }
            std::mem::swap(&mut u_prev, &mut u_cur);
            std::mem::swap(&mut u_cur, &mut u_next);
            std::mem::swap(&mut d_prev, &mut d_cur);
            std::mem::swap(&mut d_cur, &mut d_next);
        }
        Ok(traces)
    }
}

/// Single-shot forward solve with default solver settings.
pub fn forward(
    model: &AcousticModel,
    geometry: &AcquisitionGeometry,
    shot: usize,
    record_wavefield: bool,
) -> Result<ShotOutput> {
    WaveSolver::new(model, geometry, &SolverSettings::default())?.forward(shot, record_wavefield)
}

pub fn simulate_all_shots(model: &AcousticModel, geometry: &AcquisitionGeometry) -> Result<ShotRecord> {
    WaveSolver::new(model, geometry, &SolverSettings::default())?.simulate(Execution::default())
}
