//! Design and analysis models for quasi-phase-matched type-II down-conversion
//! sources of polarization-entangled photon pairs built on interlaced
//! bi-periodic poling.
//!
//! The modules follow the signal chain of such a source:
//!
//! - [`dispersion`]: effective indices, wave numbers and group delays
//! - [`grating`]: domain patterns and their Fourier spectra
//! - [`phasematch`]: tuning curves, operating points, PDC/SH spectra, calibration
//! - [`biphoton`]: the two-process entangled state, filtering and visibility
//! - [`bellstats`]: coincidence statistics, fringe fits, CHSH and Monte-Carlo data
//! - [`budget`]: efficiency, pair-rate and brightness estimates

pub mod bellstats;
pub mod biphoton;
pub mod budget;
pub mod device;
pub mod dispersion;
pub mod error;
pub mod grating;
pub mod phasematch;
pub mod units;

pub use error::{Error, Result};
