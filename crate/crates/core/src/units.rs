//! Physical constants and the unit conversions used across the crate.
//!
//! Lengths are in micrometres unless a name says otherwise, temperatures in
//! degrees Celsius, delays in picoseconds.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Photon energy in joules at a vacuum wavelength given in µm.
pub fn photon_energy_j(wavelength_um: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / (wavelength_um * 1e-6)
}

/// Converts a wavelength width (nm) at a centre wavelength (µm) into a
/// frequency width in Hz, to first order: Δν = c·Δλ/λ².
pub fn bandwidth_hz(center_um: f64, width_nm: f64) -> f64 {
    let center_m = center_um * 1e-6;
    SPEED_OF_LIGHT * width_nm * 1e-9 / (center_m * center_m)
}

pub fn nm_to_um(nm: f64) -> f64 {
    nm * 1e-3
}

pub fn um_to_nm(um: f64) -> f64 {
    um * 1e3
}
