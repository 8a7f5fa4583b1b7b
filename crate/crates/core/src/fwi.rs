//! Adjoint-state full-waveform inversion in squared slowness `m = 1/c^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::ImageGrid;
use crate::wave::{AcousticModel, AcquisitionGeometry, ShotRecord, SolverSettings, WaveSolver};

/// Gradient cells closer than this (Euclidean, in cells) to any element are
/// zeroed before the update.
pub const ELEMENT_MASK_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `m <- m - step * mean(m) * g / max|g|`.
    #[default]
    FixedNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FwiConfig {
    pub num_iterations: usize,
    pub step_rule: StepRule,
    /// Largest relative change of squared slowness per iteration.
    pub step_size: f64,
    pub init_blur_sigma: f64,
    pub gradient_smoothing_sigma: f64,
    /// Speed clamp `(min, max)` in m/s applied after every update.
    pub model_bounds: (f64, f64),
}

impl Default for FwiConfig {
    fn default() -> Self {
        Self {
            num_iterations: 20,
            step_rule: StepRule::FixedNormalized,
            step_size: 0.003,
            init_blur_sigma: 8.0,
            gradient_smoothing_sigma: 1.0,
            model_bounds: (1400.0, 1700.0),
        }
    }
}

impl FwiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_iterations == 0 {
            return Err(Error::invalid("num_iterations must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if !(self.init_blur_sigma >= 0.0) || !(self.gradient_smoothing_sigma >= 0.0) {
            return Err(Error::invalid("blur and smoothing sigmas must be non-negative"));
        }
        let (lo, hi) = self.model_bounds;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::invalid(format!("model bounds ({lo}, {hi}) are not ordered")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FwiState {
    pub current_model: AcousticModel,
    pub iteration: usize,
    pub objective_history: Vec<f64>,
    /// Processed (masked, smoothed) gradient used for the last update.
    pub gradient: ImageGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    pub mask_elements: bool,
    pub smoothing_sigma: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            mask_elements: true,
            smoothing_sigma: 0.0,
        }
    }
}

/// Observed data plus everything needed to re-simulate it.
#[derive(Debug, Clone)]
pub struct FwiProblem {
    pub geometry: AcquisitionGeometry,
    pub observed: ShotRecord,
    pub settings: SolverSettings,
    pub exec: Execution,
}

impl FwiProblem {
    pub fn new(geometry: AcquisitionGeometry, observed: ShotRecord) -> Self {
        Self {
            geometry,
            observed,
            settings: SolverSettings::default(),
            exec: Execution::default(),
        }
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn solver(&self, model: &AcousticModel) -> Result<WaveSolver> {
        let solver = WaveSolver::new(model, &self.geometry, &self.settings)?;
        let o = &self.observed;
        if o.num_shots() != self.geometry.num_shots()
            || o.num_receivers() != self.geometry.num_receivers()
            || o.num_steps() != solver.num_steps()
        {
            return Err(Error::invalid(format!(
                "observed record {}x{}x{} does not match geometry {}x{}x{}",
                o.num_shots(),
                o.num_receivers(),
                o.num_steps(),
                self.geometry.num_shots(),
                self.geometry.num_receivers(),
                solver.num_steps()
            )));
        }
        Ok(solver)
    }

    fn shots(&self) -> Vec<usize> {
        (0..self.geometry.num_shots()).collect()
    }

    /// `sum_s 0.5 |P_r u_s - d_s|^2`.
    pub fn objective(&self, model: &AcousticModel) -> Result<f64> {
        let solver = self.solver(model)?;
        let per_shot = self.exec.try_map(&self.shots(), |&s| -> Result<f64> {
            let out = solver.forward(s, false)?;
            Ok(0.5
                * out
                    .traces
                    .iter()
                    .zip(self.observed.shot(s))
                    .map(|(u, d)| (u - d) * (u - d))
                    .sum::<f64>())
        })?;
        Ok(per_shot.iter().sum())
    }

    /// Objective and raw adjoint-state gradient (no masking or smoothing).
    pub fn objective_and_raw_gradient(&self, model: &AcousticModel) -> Result<(f64, ImageGrid)> {
        let solver = self.solver(model)?;
        let per_shot = self
            .exec
            .try_map(&self.shots(), |&s| solver.misfit_gradient(s, self.observed.shot(s)))?;
        let (h, w) = model.dims();
        let mut total = 0.0;
        let mut grad = vec![0.0; h * w];
        // fixed shot order keeps the sum bitwise reproducible
        for (phi, g) in per_shot {
            total += phi;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((total, ImageGrid::new(h, w, grad)?))
    }

    pub fn objective_and_gradient(
        &self,
        model: &AcousticModel,
        options: &GradientOptions,
    ) -> Result<(f64, ImageGrid)> {
        let (phi, raw) = self.objective_and_raw_gradient(model)?;
        Ok((phi, self.postprocess(raw, options)))
    }

    pub fn gradient(&self, model: &AcousticModel, options: &GradientOptions) -> Result<ImageGrid> {
        self.objective_and_gradient(model, options).map(|(_, g)| g)
    }

    fn postprocess(&self, mut grad: ImageGrid, options: &GradientOptions) -> ImageGrid {
        if options.mask_elements {
            apply_element_mask(&mut grad, &self.geometry.element_positions, ELEMENT_MASK_RADIUS);
        }
        if options.smoothing_sigma > 0.0 {
            grad = grad.gaussian_blur(options.smoothing_sigma);
        }
        grad
    }

    /// Jacobian of the traces with respect to squared slowness applied to
    /// `dm`.
    pub fn jacobian(&self, model: &AcousticModel, dm: &ImageGrid) -> Result<ShotRecord> {
        if dm.dims() != model.dims() {
            return Err(Error::invalid("perturbation does not match the model grid"));
        }
        let solver = self.solver(model)?;
        let blocks = self.exec.try_map(&self.shots(), |&s| solver.born(s, dm.data()))?;
        ShotRecord::from_shots(
            blocks,
            self.geometry.num_receivers(),
            solver.num_steps(),
            solver.dt(),
        )
    }

    /// Transpose Jacobian applied to a data-space vector shaped like the
    /// observed record.
    pub fn jacobian_transpose(&self, model: &AcousticModel, data: &ShotRecord) -> Result<ImageGrid> {
        if !data.same_shape(&self.observed) {
            return Err(Error::invalid("data vector does not match the observed record"));
        }
        let solver = self.solver(model)?;
        let per_shot = self
            .exec
            .try_map(&self.shots(), |&s| solver.jacobian_transpose(s, data.shot(s)))?;
        let (h, w) = model.dims();
        let mut out = vec![0.0; h * w];
        for g in per_shot {
            out.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        ImageGrid::new(h, w, out)
    }
}

pub fn apply_element_mask(grad: &mut ImageGrid, elements: &[(usize, usize)], radius: f64) {
    let (h, w) = grad.dims();
    let reach = radius.floor() as isize;
    for &(er, ec) in elements {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                if ((dr * dr + dc * dc) as f64).sqrt() > radius {
                    continue;
                }
                let (r, c) = (er as isize + dr, ec as isize + dc);
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    grad[(r as usize, c as usize)] = 0.0;
                }
            }
        }
    }
}

/// Starting model: the true speed map blurred with a Gaussian of `sigma`
/// pixels (truncated at 3 sigma, edge-replicated).
pub fn make_initial_model(true_speed: &ImageGrid, sigma: f64, grid_spacing: f64) -> Result<AcousticModel> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("blur sigma must be non-negative"));
    }
    AcousticModel::new(true_speed.gaussian_blur(sigma), grid_spacing)
}

/// Gradient descent with a max-norm-normalized step, clamped to the speed
/// bounds after every update. `on_iteration` sees the state after each
/// gradient evaluation.
pub fn invert_with(
    problem: &FwiProblem,
    config: &FwiConfig,
    init: AcousticModel,
    mut on_iteration: impl FnMut(&FwiState),
) -> Result<(AcousticModel, FwiState)> {
    config.validate()?;
    let (lo, hi) = config.model_bounds;
    let dx = init.grid_spacing();
    let options = GradientOptions {
        mask_elements: true,
        smoothing_sigma: config.gradient_smoothing_sigma,
    };
    let mut model = clamp_model(&init, lo, hi)?;
    let mut history = Vec::with_capacity(config.num_iterations + 1);
    let mut last_gradient = ImageGrid::zeros(model.dims().0, model.dims().1);

    for iteration in 0..config.num_iterations {
        let (phi, grad) = problem.objective_and_gradient(&model, &options)?;
        if !phi.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        history.push(phi);
        let gmax = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let slowness = model.slowness_sq();
        let updated = if gmax > 0.0 {
            let scale = config.step_size * slowness.mean() / gmax;
            let m_new = slowness.zip_map(&grad, |m, g| m - scale * g)?;
            AcousticModel::new(
                m_new.map(|m| if m > 0.0 { (1.0 / m.sqrt()).clamp(lo, hi) } else { hi }),
                dx,
            )?
        } else {
            model.clone()
        };
        last_gradient = grad;
        model = updated;
        on_iteration(&FwiState {
            current_model: model.clone(),
            iteration: iteration + 1,
            objective_history: history.clone(),
            gradient: last_gradient.clone(),
        });
    }
    let phi = problem.objective(&model)?;
    if !phi.is_finite() {
        return Err(Error::NonFiniteObjective {
            iteration: config.num_iterations,
        });
    }
    history.push(phi);
    let state = FwiState {
        current_model: model.clone(),
        iteration: config.num_iterations,
        objective_history: history,
        gradient: last_gradient,
    };
    Ok((model, state))
}

pub fn invert(
    observed: &ShotRecord,
    geometry: &AcquisitionGeometry,
    config: &FwiConfig,
    init: AcousticModel,
) -> Result<(AcousticModel, FwiState)> {
    let problem = FwiProblem::new(geometry.clone(), observed.clone());
    invert_with(&problem, config, init, |_| {})
}

fn clamp_model(model: &AcousticModel, lo: f64, hi: f64) -> Result<AcousticModel> {
    AcousticModel::new(model.speed().map(|c| c.clamp(lo, hi)), model.grid_spacing())
}

pub fn rmse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    crate::metrics::mse(a, b).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::make_linear_array;

    fn setup() -> (AcousticModel, FwiProblem) {
        let n = 20;
        let dx = 5e-4;
        let truth = AcousticModel::new(
            ImageGrid::from_fn(n, n, |r, c| {
                if (r as f64 - 12.0).powi(2) + (c as f64 - 10.0).powi(2) < 9.0 {
                    1600.0
                } else {
                    1500.0
                }
            }),
            dx,
        )
        .unwrap();
        let mut geom = make_linear_array(3, 3, (n, n)).unwrap().with_timing(300e3, 14e-6, 0.0);
        geom.fit_time_step(1700.0, dx);
        let settings = SolverSettings {
            sponge_width: 10,
            ..Default::default()
        };
        let observed = WaveSolver::new(&truth, &geom, &settings)
            .unwrap()
            .simulate(Execution::Sequential)
            .unwrap();
        (truth, FwiProblem::new(geom, observed).with_settings(settings))
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let (truth, problem) = setup();
        let (phi, g) = problem
            .objective_and_gradient(&truth, &GradientOptions::default())
            .unwrap();
        assert_eq!(phi, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_is_quadratic_in_residual() {
        let (truth, problem) = setup();
        let background = AcousticModel::homogeneous(20, 20, 1500.0, 5e-4).unwrap();
        let synthetic = WaveSolver::new(&background, &problem.geometry, &problem.settings)
            .unwrap()
            .simulate(Execution::Sequential)
            .unwrap();
        let phi1 = problem.objective(&background).unwrap();
        // d' = 2d - Pu doubles every residual
        let mut doubled = problem.observed.clone();
        doubled
            .data_mut()
            .iter_mut()
            .zip(synthetic.data())
            .for_each(|(d, u)| *d = 2.0 * *d - u);
        let p2 = FwiProblem { observed: doubled, ..problem.clone() };
        let phi2 = p2.objective(&background).unwrap();
        assert!(phi1 > 0.0);
        assert!((phi2 / phi1 - 4.0).abs() < 1e-9);
        let _ = truth;
    }

    #[test]
    fn parallel_and_sequential_gradients_identical() {
        let (_, problem) = setup();
        let background = AcousticModel::homogeneous(20, 20, 1500.0, 5e-4).unwrap();
        let opts = GradientOptions::default();
        let a = problem.clone().with_execution(Execution::Sequential).objective_and_gradient(&background, &opts).unwrap();
        let b = problem.with_execution(Execution::Parallel).objective_and_gradient(&background, &opts).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mask_zeroes_disc_around_elements() {
        let mut g = ImageGrid::filled(10, 10, 1.0);
        apply_element_mask(&mut g, &[(5, 5)], 2.0);
        assert_eq!(g.get(5, 7), 0.0);
        assert_eq!(g.get(3, 5), 0.0);
        assert_eq!(g.get(6, 6), 0.0);
        assert_eq!(g.get(7, 7), 1.0);
        assert_eq!(g.get(5, 8), 1.0);
    }

    #[test]
    fn initial_model_examples() {
        let speed = ImageGrid::from_fn(16, 16, |r, c| 1450.0 + ((r * 7 + c * 3) % 11) as f64 * 10.0);
        assert_eq!(make_initial_model(&speed, 0.0, 1e-3).unwrap().speed(), &speed);
        let flat = ImageGrid::filled(8, 8, 1540.0);
        for v in make_initial_model(&flat, 3.0, 1e-3).unwrap().speed().data() {
            assert!((v - 1540.0).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FwiConfig::default().validate().is_ok());
        assert!(FwiConfig { num_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(FwiConfig { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(FwiConfig { model_bounds: (1600.0, 1500.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn fixed_point_and_history_length() {
        let (truth, problem) = setup();
        let config = FwiConfig {
            num_iterations: 3,
            ..Default::default()
        };
        let (model, state) = invert_with(&problem, &config, truth.clone(), |_| {}).unwrap();
        assert_eq!(state.objective_history.len(), 4);
        assert!(state.objective_history.iter().all(|&p| p == 0.0));
        assert_eq!(model.speed(), truth.speed());
    }

    #[test]
    fn mismatched_record_is_rejected() {
        let (truth, problem) = setup();
        let bad = ShotRecord::zeros(2, 3, problem.observed.num_steps(), problem.observed.dt());
        let p = FwiProblem { observed: bad, ..problem };
        assert!(p.objective(&truth).is_err());
    }
}
