//! Pair-generation budget: SH efficiency → PDC efficiency → pair rate →
//! brightness.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Result};
use crate::units::photon_energy_j;

/// Order-unity factor in η_PDC = κ·η_SH·(hc/λ_s)·Δν; 2 accounts for the two
/// simultaneously phase-matched processes.
pub const DEFAULT_KAPPA: f64 = 2.0;

/// Characterization numbers of a source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyRecord {
    /// P_SH/(P_TE·P_TM).
    pub sh_efficiency_per_w: f64,
    /// Pairs per pump photon.
    pub pdc_efficiency: f64,
    pub bandwidth_hz: f64,
    pub pump_wavelength_um: f64,
    pub signal_wavelength_um: f64,
}

impl EfficiencyRecord {
    /// Record with η_PDC derived from η_SH.
    pub fn from_shg(sh_efficiency_per_w: f64, signal_wavelength_um: f64, pump_wavelength_um: f64, bandwidth_hz: f64, kappa: f64) -> Result<Self> {
        ensure_positive("pump_wavelength_um", pump_wavelength_um)?;
        Ok(Self {
            sh_efficiency_per_w,
            pdc_efficiency: pdc_from_shg(sh_efficiency_per_w, signal_wavelength_um, bandwidth_hz, kappa)?,
            bandwidth_hz,
            pump_wavelength_um,
            signal_wavelength_um,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("sh_efficiency_per_w", self.sh_efficiency_per_w)?;
        ensure_non_negative("pdc_efficiency", self.pdc_efficiency)?;
        ensure_non_negative("bandwidth_hz", self.bandwidth_hz)?;
        ensure_positive("pump_wavelength_um", self.pump_wavelength_um)?;
        ensure_positive("signal_wavelength_um", self.signal_wavelength_um)?;
        if self.pdc_efficiency >= 1e-3 {
            return Err(crate::Error::InvalidParameter {
                param: "pdc_efficiency",
                reason: "must be far below one pair per pump photon".into(),
            });
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

/// η_PDC = κ·η_SH·(hc/λ_s)·Δν.
pub fn pdc_from_shg(sh_efficiency_per_w: f64, signal_wavelength_um: f64, bandwidth_hz: f64, kappa: f64) -> Result<f64> {
    ensure_non_negative("sh_efficiency_per_w", sh_efficiency_per_w)?;
    ensure_positive("signal_wavelength_um", signal_wavelength_um)?;
    ensure_non_negative("bandwidth_hz", bandwidth_hz)?;
    ensure_positive("kappa", kappa)?;
    Ok(kappa * sh_efficiency_per_w * photon_energy_j(signal_wavelength_um) * bandwidth_hz)
}

/// Pairs/s = η_PDC × (pump photons/s).
pub fn pair_rate(pdc_efficiency: f64, pump_power_mw: f64, pump_wavelength_um: f64) -> Result<f64> {
    ensure_non_negative("pdc_efficiency", pdc_efficiency)?;
    ensure_non_negative("pump_power_mw", pump_power_mw)?;
    ensure_positive("pump_wavelength_um", pump_wavelength_um)?;
    Ok(pdc_efficiency * pump_power_mw * 1e-3 / photon_energy_j(pump_wavelength_um))
}

/// Pairs/(s·mW·GHz).
pub fn brightness(pdc_efficiency: f64, pump_wavelength_um: f64, bandwidth_ghz: f64) -> Result<f64> {
    ensure_positive("bandwidth_ghz", bandwidth_ghz)?;
    Ok(pair_rate(pdc_efficiency, 1.0, pump_wavelength_um)? / bandwidth_ghz)
}

/// How the bandwidth entering the brightness is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthConvention {
    /// Measured PDC FWHM.
    Measured,
    /// FWHM of the modelled PDC spectrum.
    Modelled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub pump_power_mw: f64,
    pub pair_rate_per_s: f64,
    pub mean_pair_number: f64,
}

/// Pair rate and mean pair number per window for each pump power.
pub fn budget_table(pdc_efficiency: f64, pump_wavelength_um: f64, powers_mw: &[f64], window_ns: f64) -> Result<Vec<BudgetRow>> {
    powers_mw
        .iter()
        .map(|&p| {
            let rate = pair_rate(pdc_efficiency, p, pump_wavelength_um)?;
            Ok(BudgetRow {
                pump_power_mw: p,
                pair_rate_per_s: rate,
                mean_pair_number: crate::biphoton::mean_pair_number(rate, window_ns)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::bandwidth_hz;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // hand evaluation: h·c/λ with h = 6.62607015e-34, c = 299792458
    fn photon_j(wavelength_um: f64) -> f64 {
        6.626_070_15e-34 * 299_792_458.0 / (wavelength_um * 1e-6)
    }

    #[test]
    fn pdc_estimate_from_shg() {
        let dnu = 87e9;
        let eta = pdc_from_shg(0.007, 1.55, dnu, DEFAULT_KAPPA).unwrap();
        assert_relative_eq!(eta, 2.0 * 0.007 * photon_j(1.55) * dnu, max_relative = 1e-12);
        assert!((eta - 1.6e-10).abs() < 0.05e-10, "{eta}");
        assert!(eta / 1.4e-10 < 2.0 && eta / 1.4e-10 > 0.5);
        assert_eq!(pdc_from_shg(0.0, 1.55, dnu, 2.0).unwrap(), 0.0);
        assert_relative_eq!(pdc_from_shg(0.007, 1.55, 2.0 * dnu, 2.0).unwrap(), 2.0 * eta);
    }

    #[test]
    fn pair_rate_examples() {
        let r = pair_rate(3e-10, 1.0, 0.78).unwrap();
        assert_relative_eq!(r, 3e-10 * 1e-3 / photon_j(0.78), max_relative = 1e-12);
        assert!((r - 1.18e6).abs() < 0.01e6);
        let alpha = crate::biphoton::mean_pair_number(pair_rate(3e-10, 16.0, 0.78).unwrap(), 4.0).unwrap();
        assert!((0.06..=0.10).contains(&alpha), "{alpha}");
        assert_eq!(pair_rate(3e-10, 0.0, 0.78).unwrap(), 0.0);
    }

    #[test]
    fn brightness_examples() {
        let dnu_ghz = bandwidth_hz(1.55, 0.7) / 1e9;
        let b = brightness(3e-10, 0.78, dnu_ghz).unwrap();
        assert!(b / 7e3 < 2.0 && b / 7e3 > 0.5, "{b}");
        assert_relative_eq!(brightness(3e-10, 0.78, 2.0 * dnu_ghz).unwrap(), 0.5 * b, max_relative = 1e-12);
        assert_eq!(brightness(0.0, 0.78, dnu_ghz).unwrap(), 0.0);
        assert!(brightness(3e-10, 0.78, 0.0).is_err());
    }

    #[test]
    fn record_json_has_units_and_round_trips() {
        let r = EfficiencyRecord::from_shg(0.007, 1.55, 0.78, 87e9, DEFAULT_KAPPA).unwrap();
        let s = r.to_json_string();
        assert!(s.contains("sh_efficiency_per_w") && s.contains("bandwidth_hz") && s.contains("pump_wavelength_um"));
        assert_eq!(EfficiencyRecord::from_json_str(&s).unwrap(), r);
        assert!(EfficiencyRecord::from_json_str(&s.replace("bandwidth_hz", "bandwidth")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pair_rate_is_linear(eta in 0.0..1e-8f64, p in 0.0..100.0f64, a in 0.0..10.0f64, l in 0.4..2.0f64) {
            let lhs = pair_rate(eta, a * p, l).unwrap();
            let rhs = a * pair_rate(eta, p, l).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn brightness_closes_units(eta in 0.0..1e-8f64, p in 0.0..100.0f64, dnu in 1.0..1000.0f64, l in 0.4..2.0f64) {
            let b = brightness(eta, l, dnu).unwrap();
            let rate = pair_rate(eta, p, l).unwrap();
            prop_assert!((b * p * dnu - rate).abs() <= 1e-12 * rate.max(1e-300));
        }
    }
}
