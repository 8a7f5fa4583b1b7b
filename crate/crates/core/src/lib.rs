//! Desk-scale ultrasound simulation and inversion toolkit.
//!
//! The pipeline converts X-ray intensities to Hounsfield units and then to
//! speed of sound ([`tissue`]), simulates transducer-array acquisitions with
//! a 2D acoustic solver ([`wave`]), reconstructs the speed-of-sound map by
//! adjoint-state full-waveform inversion ([`fwi`]), transfers high-frequency
//! spectral texture between images ([`fourier`]) and scores results with
//! reconstruction losses ([`losses`]) and quality metrics ([`metrics`]).

pub mod error;
pub mod exec;
pub mod fourier;
pub mod fwi;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod tissue;
pub mod wave;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::ImageGrid;
