//! Oracles and fixtures shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavesono::fwi::{make_initial_model, FwiConfig, FwiProblem};
use wavesono::phantom::two_inclusion;
use wavesono::pipeline::TransducerConfig;
use wavesono::wave::{AcousticModel, AcquisitionGeometry, SolverSettings, WaveSolver};
use wavesono::{Execution, ImageGrid};

pub fn random_grid(h: usize, w: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageGrid::from_fn(h, w, |_, _| rng.gen::<f64>())
}

pub fn ricker(f: f64, t: f64) -> f64 {
    let tau = t - 1.5 / f;
    let a = (PI * f * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Pressure at distance `r` from a point source in 2D for
/// `u_tt - c^2 lap u = c^2 s(t) delta(x)`, with `s` a Ricker wavelet:
///
/// `u(r, t) = 1/(2 pi) * int_0^{acosh(ct/r)} s(t - (r/c) cosh eta) d eta`
///
/// (the Green's function `H(ct - r) / (2 pi c sqrt(c^2 t^2 - r^2))`
/// convolved with `s`, after substituting `tau = (r/c) cosh eta`).
pub fn analytic_trace(r: f64, c: f64, f: f64, dt: f64, nt: usize, amplitude: f64) -> Vec<f64> {
    const PANELS: usize = 4000;
    (0..nt)
        .map(|k| {
            let t = k as f64 * dt;
            if c * t <= r {
                return 0.0;
            }
            let eta_max = (c * t / r).acosh();
            let h = eta_max / PANELS as f64;
            // composite Simpson
            let mut acc = 0.0;
            for j in 0..=PANELS {
                let eta = j as f64 * h;
                let w = if j == 0 || j == PANELS {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * ricker(f, t - r / c * eta.cosh());
            }
            amplitude * acc * h / 3.0 / (2.0 * PI)
        })
        .collect()
}

/// First time (in samples, linearly interpolated) at which `|trace|`
/// reaches `fraction` of its maximum.
pub fn onset(trace: &[f64], fraction: f64) -> f64 {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let level = fraction * peak;
    for k in 1..trace.len() {
        let (a, b) = (trace[k - 1].abs(), trace[k].abs());
        if b >= level {
            return if a >= level { (k - 1) as f64 } else { (k - 1) as f64 + (level - a) / (b - a) };
        }
    }
    f64::NAN
}

/// Normalized cross-correlation at zero lag.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub const TWIN_SIZE: usize = 64;
pub const TWIN_ELEMENTS: usize = 16;
pub const TWIN_DX: f64 = 5e-4;
pub const TWIN_BLUR: f64 = 4.0;

pub struct Twin {
    pub truth: AcousticModel,
    pub init: AcousticModel,
    pub problem: FwiProblem,
    pub config: FwiConfig,
}

/// Two-inclusion twin experiment on a full ring of elements; the observed
/// data is simulated from the true model.
pub fn twin(size: usize, elements: usize, iterations: usize, exec: Execution) -> Twin {
    let truth = AcousticModel::new(two_inclusion(size), TWIN_DX).unwrap();
    let config = FwiConfig {
        num_iterations: iterations,
        init_blur_sigma: TWIN_BLUR,
        ..FwiConfig::default()
    };
    let transducer = TransducerConfig {
        num_elements: elements,
        ..TransducerConfig::default()
    };
    let geometry = transducer
        .build(truth.dims(), TWIN_DX, config.model_bounds)
        .unwrap();
    let settings = SolverSettings::default();
    let observed = WaveSolver::new(&truth, &geometry, &settings)
        .unwrap()
        .simulate(exec)
        .unwrap();
    let init = make_initial_model(truth.speed(), TWIN_BLUR, TWIN_DX).unwrap();
    let problem = FwiProblem::new(geometry, observed)
        .with_settings(settings)
        .with_execution(exec);
    Twin {
        truth,
        init,
        problem,
        config,
    }
}

/// Homogeneous model with a linear array at `depth_row`.
pub fn homogeneous_setup(
    size: usize,
    c: f64,
    dx: f64,
    geometry: AcquisitionGeometry,
) -> (AcousticModel, AcquisitionGeometry) {
    let model = AcousticModel::homogeneous(size, size, c, dx).unwrap();
    let mut geometry = geometry;
    geometry.fit_time_step(c, dx);
    (model, geometry)
}

pub fn distance_m(a: (usize, usize), b: (usize, usize), dx: f64) -> f64 {
    (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64) * dx
}

#[derive(Debug, serde::Deserialize)]
pub struct ScoreRow {
    pub experiment: String,
    pub mse: f64,
    pub mse_std: f64,
    pub psnr: f64,
    pub psnr_std: f64,
    pub ssim: f64,
    pub ssim_std: f64,
}

pub fn reported_scores() -> Vec<ScoreRow> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/reported_scores.csv");
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}
