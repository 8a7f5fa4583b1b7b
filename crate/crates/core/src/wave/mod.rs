//! Constant-density acoustic wave propagation in 2D.
//!
//! `m u_tt + eta u_t = lap(u) + s` is discretized with second-order leapfrog
//! in time and a fourth-order centered Laplacian in space. The physical grid
//! is embedded in a padded computational grid whose outer band is a
//! cosine-tapered damping sponge.

mod geometry;
mod model;
mod record;
mod solver;
mod wavelet;

pub use geometry::{
    curvilinear_angles, make_curvilinear_array, make_linear_array, stable_time_step, AcquisitionGeometry, ArrayKind,
    Wavelet, CFL_FACTOR, DEFAULT_CENTRAL_FREQUENCY, LINEAR_ARRAY_MARGIN, MIN_POINTS_PER_WAVELENGTH,
};
pub use model::AcousticModel;
pub use record::ShotRecord;
pub use solver::{
    forward, simulate_all_shots, ShotOutput, SolverSettings, WaveSolver, WavefieldSnapshot,
    DEFAULT_SPONGE_WIDTH, STABILITY_CEILING,
};
pub use wavelet::ricker_wavelet;
