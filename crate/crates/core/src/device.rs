//! Nominal parameters of the reference source: a 60 mm Ti:PPLN waveguide
//! with a 50 mm interlaced grating of 9.30/9.37 µm periods.

use crate::dispersion::{DispersionModel, Polarization};
use crate::error::Result;
use crate::grating::InterlacedSpec;
use crate::phasematch::{calibrate_model, CalibrationConstraint};

pub const PUMP_UM: f64 = 0.780;
pub const OPERATING_TEMPERATURE_C: f64 = 156.4;
/// Temperature at which the four PDC peaks no longer coincide.
pub const SEPARATED_TEMPERATURE_C: f64 = 159.2;

/// Nominal centres of the two demultiplexer ports.
pub const SIGNAL_PORT_UM: f64 = 1.551;
pub const IDLER_PORT_UM: f64 = 1.571;

pub const PERIOD1_UM: f64 = 9.30;
pub const PERIOD2_UM: f64 = 9.37;
pub const PERIODS_PER_SECTION: usize = 10;
pub const INTERACTION_LENGTH_MM: f64 = 50.0;

pub const COINCIDENCE_WINDOW_NS: f64 = 4.0;
/// Lumped transmission of each arm from chip to detector.
pub const ARM_TRANSMISSION: f64 = 0.15;

/// SH efficiency P_SH/(P_TE·P_TM), 1/W.
pub const SH_EFFICIENCY_PER_W: f64 = 0.007;
/// PDC efficiency from the pump-power slope of the coincidence rate.
pub const MEASURED_PDC_EFFICIENCY: f64 = 3e-10;
/// Measured PDC bandwidth, nm.
pub const MEASURED_BANDWIDTH_NM: f64 = 0.7;
/// Mean pair number per window reached at full pump power.
pub const FULL_POWER_MW: f64 = 16.0;
pub const REDUCED_POWER_MW: f64 = 6.0;

/// The energy-conserving pair (λ_s, λ_i) closest, in the least-squares
/// sense, to the target wavelengths.
pub fn nearest_energy_conserving_pair(pump_um: f64, signal_target_um: f64, idler_target_um: f64) -> (f64, f64) {
    let idler = |s: f64| 1.0 / (1.0 / pump_um - 1.0 / s);
    let cost = |s: f64| (s - signal_target_um).powi(2) + (idler(s) - idler_target_um).powi(2);
    let (mut lo, mut hi) = (signal_target_um - 0.05, signal_target_um + 0.05);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if cost(a) < cost(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s = 0.5 * (lo + hi);
    (s, idler(s))
}

/// The two phase-matching conditions at the operating point: the Λ1 section
/// emits the TM photon at the signal wavelength, the Λ2 section the TE one.
pub fn operating_constraints() -> [CalibrationConstraint; 2] {
    let (signal, _) = nearest_energy_conserving_pair(PUMP_UM, SIGNAL_PORT_UM, IDLER_PORT_UM);
    let make = |signal_pol, period_um| CalibrationConstraint {
        pump_um: PUMP_UM,
        temperature_c: OPERATING_TEMPERATURE_C,
        signal_um: signal,
        signal_pol,
        period_um,
    };
    [make(Polarization::TM, PERIOD1_UM), make(Polarization::TE, PERIOD2_UM)]
}

pub fn interlaced_spec() -> InterlacedSpec {
    InterlacedSpec {
        period1_um: PERIOD1_UM,
        period2_um: PERIOD2_UM,
        periods_per_section: PERIODS_PER_SECTION,
        length_mm: INTERACTION_LENGTH_MM,
        duty: 0.5,
    }
}

/// Bulk lithium niobate corrected to the reference operating point.
pub fn calibrated_model() -> Result<DispersionModel> {
    calibrate_model(&DispersionModel::lithium_niobate(), &operating_constraints())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pair_conserves_energy() {
        let (s, i) = nearest_energy_conserving_pair(PUMP_UM, SIGNAL_PORT_UM, IDLER_PORT_UM);
        assert!((1.0 / PUMP_UM - 1.0 / s - 1.0 / i).abs() < 1e-14);
        assert!((s - 1.5500530).abs() < 1e-6, "{s}");
        assert!((i - 1.5700755).abs() < 1e-6, "{i}");
    }
}
