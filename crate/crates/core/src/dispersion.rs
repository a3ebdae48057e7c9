//! Effective-index model of the Ti-indiffused Z-cut lithium niobate waveguide.
//!
//! Bulk indices come from a temperature-dependent Sellmeier equation for
//! congruent LiNbO₃ (Edwards & Lawrence form):
//!
//! ```text
//! n²(λ, T) = A1 + (A2 + B1·F) / (λ² − (A3 + B2·F)²) + B3·F − A4·λ²
//! F        = (T − T_ref)·(T + T_offset)
//! ```
//!
//! with λ in µm and T in °C. TE modes see the ordinary index, TM modes the
//! extraordinary one. Each polarization carries an affine waveguide
//! correction `Δn(λ) = offset + slope·(λ − λ_ref)` on top of the bulk value;
//! the corrections are what `phasematch::calibrate_model` fits.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::{ensure_positive, ensure_range, Error, Result};
use crate::units::{SPEED_OF_LIGHT, TWO_PI};

pub const WAVELENGTH_MIN_UM: f64 = 0.4;
pub const WAVELENGTH_MAX_UM: f64 = 2.0;
pub const TEMPERATURE_MIN_C: f64 = 20.0;
pub const TEMPERATURE_MAX_C: f64 = 250.0;

/// Finite-difference step used for group indices (1 nm).
pub const GROUP_INDEX_STEP_UM: f64 = 1e-3;

/// Guided-mode polarization. TE couples to |H⟩, TM to |V⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    TE,
    TM,
}

impl Polarization {
    pub fn orthogonal(self) -> Self {
        match self {
            Polarization::TE => Polarization::TM,
            Polarization::TM => Polarization::TE,
        }
    }

    pub fn ket(self) -> &'static str {
        match self {
            Polarization::TE => "H",
            Polarization::TM => "V",
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::TE => f.write_str("TE"),
            Polarization::TM => f.write_str("TM"),
        }
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TE" | "H" => Ok(Polarization::TE),
            "TM" | "V" => Ok(Polarization::TM),
            other => Err(Error::Input(format!("unknown polarization `{other}`"))),
        }
    }
}

/// Temperature-dependent Sellmeier coefficient set for one crystal axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sellmeier {
    /// A1..A4 (dimensionless, µm², µm, µm⁻²).
    pub a: [f64; 4],
    /// B1..B3 temperature coefficients (per K²-like unit of F).
    pub b: [f64; 3],
    pub t_ref_c: f64,
    pub t_offset_c: f64,
}

impl Sellmeier {
    /// Ordinary axis of congruent LiNbO₃.
    pub fn lithium_niobate_ordinary() -> Self {
        Self {
            a: [4.9048, 0.11775, 0.21802, 0.027153],
            b: [2.2314e-8, -2.9671e-8, 2.1429e-8],
            t_ref_c: 24.5,
            t_offset_c: 570.82,
        }
    }

    /// Extraordinary axis of congruent LiNbO₃.
    pub fn lithium_niobate_extraordinary() -> Self {
        Self {
            a: [4.5820, 0.099169, 0.21090, 0.021940],
            b: [5.2716e-8, -4.9143e-8, 2.2971e-7],
            t_ref_c: 24.5,
            t_offset_c: 570.82,
        }
    }

    /// Bulk index without range checks.
    pub fn index(&self, wavelength_um: f64, temperature_c: f64) -> f64 {
        let [a1, a2, a3, a4] = self.a;
        let [b1, b2, b3] = self.b;
        let f = (temperature_c - self.t_ref_c) * (temperature_c + self.t_offset_c);
        let l2 = wavelength_um * wavelength_um;
        let pole = a3 + b2 * f;
        (a1 + (a2 + b1 * f) / (l2 - pole * pole) + b3 * f - a4 * l2).sqrt()
    }
}

/// Affine effective-index offset `offset + slope·(λ − λ_ref)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideCorrection {
    pub offset: f64,
    pub slope_per_um: f64,
}

impl WaveguideCorrection {
    pub fn new(offset: f64, slope_per_um: f64) -> Self {
        Self {
            offset,
            slope_per_um,
        }
    }

    pub fn at(&self, wavelength_um: f64, reference_um: f64) -> f64 {
        self.offset + self.slope_per_um * (wavelength_um - reference_um)
    }
}

/// Polarization-, wavelength- and temperature-dependent effective index.
///
/// Immutable once built; calibration returns a new model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionModel {
    ordinary: Sellmeier,
    extraordinary: Sellmeier,
    #[serde(default)]
    te_correction: WaveguideCorrection,
    #[serde(default)]
    tm_correction: WaveguideCorrection,
    reference_wavelength_um: f64,
}

impl Default for DispersionModel {
    fn default() -> Self {
        Self::lithium_niobate()
    }
}

impl DispersionModel {
    /// Bulk congruent LiNbO₃ with zero waveguide correction.
    pub fn lithium_niobate() -> Self {
        Self {
            ordinary: Sellmeier::lithium_niobate_ordinary(),
            extraordinary: Sellmeier::lithium_niobate_extraordinary(),
            te_correction: WaveguideCorrection::default(),
            tm_correction: WaveguideCorrection::default(),
            reference_wavelength_um: 1.55,
        }
    }

    pub fn new(
        ordinary: Sellmeier,
        extraordinary: Sellmeier,
        te_correction: WaveguideCorrection,
        tm_correction: WaveguideCorrection,
        reference_wavelength_um: f64,
    ) -> Result<Self> {
        ensure_range(
            "reference_wavelength_um",
            reference_wavelength_um,
            WAVELENGTH_MIN_UM,
            WAVELENGTH_MAX_UM,
        )?;
        let model = Self {
            ordinary,
            extraordinary,
            te_correction,
            tm_correction,
            reference_wavelength_um,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        ensure_range(
            "reference_wavelength_um",
            self.reference_wavelength_um,
            WAVELENGTH_MIN_UM,
            WAVELENGTH_MAX_UM,
        )?;
        // The index must be real and above 1 at the corners of the valid domain.
        for &l in &[WAVELENGTH_MIN_UM, 1.0, WAVELENGTH_MAX_UM] {
            for &t in &[TEMPERATURE_MIN_C, TEMPERATURE_MAX_C] {
                for pol in [Polarization::TE, Polarization::TM] {
                    let n = self.index_unchecked(pol, l, t);
                    if !(n.is_finite() && n > 1.0) {
                        return Err(Error::InvalidParameter {
                            param: "sellmeier",
                            reason: format!("{pol} index {n} at λ={l} µm, T={t} °C"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with the given waveguide corrections.
    pub fn with_corrections(&self, te: WaveguideCorrection, tm: WaveguideCorrection) -> Self {
        Self {
            te_correction: te,
            tm_correction: tm,
            ..self.clone()
        }
    }

    pub fn correction(&self, pol: Polarization) -> WaveguideCorrection {
        match pol {
            Polarization::TE => self.te_correction,
            Polarization::TM => self.tm_correction,
        }
    }

    pub fn sellmeier(&self, pol: Polarization) -> &Sellmeier {
        match pol {
            Polarization::TE => &self.ordinary,
            Polarization::TM => &self.extraordinary,
        }
    }

    pub fn reference_wavelength_um(&self) -> f64 {
        self.reference_wavelength_um
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Bulk index of the axis seen by `pol`, without waveguide correction.
    pub fn bulk_index(&self, pol: Polarization, wavelength_um: f64, temperature_c: f64) -> Result<f64> {
        check_domain(wavelength_um, temperature_c)?;
        Ok(self.sellmeier(pol).index(wavelength_um, temperature_c))
    }

    pub(crate) fn index_unchecked(&self, pol: Polarization, wavelength_um: f64, temperature_c: f64) -> f64 {
        self.sellmeier(pol).index(wavelength_um, temperature_c)
            + self
                .correction(pol)
                .at(wavelength_um, self.reference_wavelength_um)
    }

    /// Effective index of the guided mode.
    pub fn effective_index(&self, pol: Polarization, wavelength_um: f64, temperature_c: f64) -> Result<f64> {
        check_domain(wavelength_um, temperature_c)?;
        Ok(self.index_unchecked(pol, wavelength_um, temperature_c))
    }

    /// Propagation constant β = 2π·n_eff/λ in rad/µm.
    pub fn wavenumber(&self, pol: Polarization, wavelength_um: f64, temperature_c: f64) -> Result<f64> {
        let n = self.effective_index(pol, wavelength_um, temperature_c)?;
        Ok(TWO_PI * n / wavelength_um)
    }

    /// Group index n − λ·dn/dλ by the five-point central difference with
    /// step `step_um`.
    pub fn group_index_with_step(
        &self,
        pol: Polarization,
        wavelength_um: f64,
        temperature_c: f64,
        step_um: f64,
    ) -> Result<f64> {
        check_domain(wavelength_um, temperature_c)?;
        ensure_positive("step_um", step_um)?;
        let n = self.index_unchecked(pol, wavelength_um, temperature_c);
        let at = |k: f64| self.index_unchecked(pol, wavelength_um + k * step_um, temperature_c);
        let slope = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * step_um);
        Ok(n - wavelength_um * slope)
    }

    pub fn group_index(&self, pol: Polarization, wavelength_um: f64, temperature_c: f64) -> Result<f64> {
        self.group_index_with_step(pol, wavelength_um, temperature_c, GROUP_INDEX_STEP_UM)
    }

    /// TM-minus-TE group delay in ps accumulated over `length_mm`.
    pub fn group_delay_difference(&self, wavelength_um: f64, temperature_c: f64, length_mm: f64) -> Result<f64> {
        ensure_positive("length_mm", length_mm)?;
        let ng_te = self.group_index(Polarization::TE, wavelength_um, temperature_c)?;
        let ng_tm = self.group_index(Polarization::TM, wavelength_um, temperature_c)?;
        Ok(delay_ps(length_mm, ng_tm - ng_te))
    }
}

/// Delay in ps for a group-index difference over a length in mm.
pub fn delay_ps(length_mm: f64, group_index_difference: f64) -> f64 {
    length_mm * 1e-3 * group_index_difference / SPEED_OF_LIGHT * 1e12
}

fn check_domain(wavelength_um: f64, temperature_c: f64) -> Result<()> {
    ensure_range("wavelength_um", wavelength_um, WAVELENGTH_MIN_UM, WAVELENGTH_MAX_UM)?;
    ensure_range("temperature_c", temperature_c, TEMPERATURE_MIN_C, TEMPERATURE_MAX_C)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Independent evaluation of the same Sellmeier form, written out longhand.
    fn sellmeier_oracle(ordinary: bool, l: f64, t: f64) -> f64 {
        let f = (t - 24.5) * (t + 570.82);
        if ordinary {
            (4.9048 + (0.11775 + 2.2314e-8 * f) / (l * l - (0.21802 - 2.9671e-8 * f).powi(2))
                + 2.1429e-8 * f
                - 0.027153 * l * l)
                .sqrt()
        } else {
            (4.5820 + (0.099169 + 5.2716e-8 * f) / (l * l - (0.21090 - 4.9143e-8 * f).powi(2))
                + 2.2971e-7 * f
                - 0.021940 * l * l)
                .sqrt()
        }
    }

    #[test]
    fn room_temperature_indices_at_1550() {
        let m = DispersionModel::lithium_niobate();
        let n_te = m.effective_index(Polarization::TE, 1.55, 25.0).unwrap();
        let n_tm = m.effective_index(Polarization::TM, 1.55, 25.0).unwrap();
        assert!((n_te - 2.211).abs() < 1e-3, "{n_te}");
        assert!((n_tm - 2.138).abs() < 1e-3, "{n_tm}");
        assert_relative_eq!(n_te, sellmeier_oracle(true, 1.55, 25.0), epsilon = 1e-14);
        assert_relative_eq!(n_tm, sellmeier_oracle(false, 1.55, 25.0), epsilon = 1e-14);
    }

    #[test]
    fn constant_correction_shifts_index() {
        let base = DispersionModel::lithium_niobate();
        let shifted = base.with_corrections(WaveguideCorrection::new(0.01, 0.0), WaveguideCorrection::default());
        for l in [0.5, 0.78, 1.3, 1.55, 1.9] {
            let d = shifted.effective_index(Polarization::TE, l, 100.0).unwrap()
                - base.effective_index(Polarization::TE, l, 100.0).unwrap();
            assert!((d - 0.01).abs() < 1e-14);
            let d_tm = shifted.effective_index(Polarization::TM, l, 100.0).unwrap()
                - base.effective_index(Polarization::TM, l, 100.0).unwrap();
            assert_eq!(d_tm, 0.0);
        }
    }

    #[test]
    fn wavenumber_definition() {
        let m = DispersionModel::lithium_niobate();
        let n = m.effective_index(Polarization::TM, 1.0, 80.0).unwrap();
        let beta = m.wavenumber(Polarization::TM, 1.0, 80.0).unwrap();
        assert_relative_eq!(beta, TWO_PI * n, epsilon = 1e-14);
        // n_eff = 2 at 1 µm gives 4π rad/µm
        let two = m.with_corrections(
            WaveguideCorrection::default(),
            WaveguideCorrection::new(2.0 - m.bulk_index(Polarization::TM, 1.0, 80.0).unwrap(), 0.0),
        );
        assert_relative_eq!(
            two.wavenumber(Polarization::TM, 1.0, 80.0).unwrap(),
            4.0 * std::f64::consts::PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn out_of_range_arguments_name_the_parameter() {
        let m = DispersionModel::lithium_niobate();
        match m.effective_index(Polarization::TE, 2.5, 25.0) {
            Err(Error::OutOfRange { param, .. }) => assert_eq!(param, "wavelength_um"),
            other => panic!("{other:?}"),
        }
        match m.wavenumber(Polarization::TE, 1.5, 300.0) {
            Err(Error::OutOfRange { param, .. }) => assert_eq!(param, "temperature_c"),
            other => panic!("{other:?}"),
        }
        assert!(m.effective_index(Polarization::TE, f64::NAN, 25.0).is_err());
        assert!(m.group_delay_difference(1.55, 25.0, 0.0).is_err());
    }

    #[test]
    fn group_delay_arithmetic() {
        // Δn_g = 0.08 over 60 mm
        assert!((delay_ps(60.0, 0.08) - 16.0).abs() < 0.02);
        let m = DispersionModel::lithium_niobate();
        let tau = m.group_delay_difference(1.55, 156.4, 60.0).unwrap();
        // extraordinary group index is lower: TM photons arrive first
        assert!(tau < 0.0 && tau > -25.0, "{tau}");
    }

    #[test]
    fn identical_axes_have_no_delay() {
        let o = Sellmeier::lithium_niobate_ordinary();
        let m = DispersionModel::new(o.clone(), o, Default::default(), Default::default(), 1.55).unwrap();
        assert_eq!(m.group_delay_difference(1.55, 100.0, 60.0).unwrap(), 0.0);
    }

    #[test]
    fn thermo_optic_sign_is_constant_per_axis() {
        let m = DispersionModel::lithium_niobate();
        for pol in [Polarization::TE, Polarization::TM] {
            for l in [0.78, 1.55] {
                let signs: Vec<bool> = (100..200)
                    .map(|t| {
                        let t = t as f64;
                        let dn = m.effective_index(pol, l, t + 0.5).unwrap() - m.effective_index(pol, l, t - 0.5).unwrap();
                        dn > 0.0
                    })
                    .collect();
                assert!(signs.iter().all(|&s| s == signs[0]), "{pol} at {l}");
            }
        }
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let m = DispersionModel::lithium_niobate()
            .with_corrections(WaveguideCorrection::new(1e-3, -2e-3), WaveguideCorrection::new(-1e-3, 0.01));
        let back = DispersionModel::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(m, back);
        assert!(DispersionModel::from_json_str(r#"{"ordinary": 1}"#).is_err());
        let mut bad = m.clone();
        bad.ordinary.a[0] = -10.0;
        assert!(DispersionModel::from_json_str(&bad.to_json_string()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn index_above_one(l in WAVELENGTH_MIN_UM..=WAVELENGTH_MAX_UM, t in TEMPERATURE_MIN_C..=TEMPERATURE_MAX_C) {
            let m = DispersionModel::lithium_niobate();
            for pol in [Polarization::TE, Polarization::TM] {
                prop_assert!(m.effective_index(pol, l, t).unwrap() > 1.0);
            }
        }

        #[test]
        fn negative_uniaxial(l in WAVELENGTH_MIN_UM..=WAVELENGTH_MAX_UM, t in TEMPERATURE_MIN_C..=TEMPERATURE_MAX_C) {
            let m = DispersionModel::lithium_niobate();
            let no = m.bulk_index(Polarization::TE, l, t).unwrap();
            let ne = m.bulk_index(Polarization::TM, l, t).unwrap();
            prop_assert!(ne < no);
        }

        #[test]
        fn normal_dispersion_in_telecom_band(l in 1.3f64..1.699, dl in 1e-4f64..1e-3, t in TEMPERATURE_MIN_C..=TEMPERATURE_MAX_C) {
            let m = DispersionModel::lithium_niobate();
            for pol in [Polarization::TE, Polarization::TM] {
                let a = m.effective_index(pol, l, t).unwrap();
                let b = m.effective_index(pol, l + dl, t).unwrap();
                prop_assert!(b < a);
                prop_assert!(m.wavenumber(pol, l + dl, t).unwrap() < m.wavenumber(pol, l, t).unwrap());
            }
        }

        #[test]
        fn richardson_consistency(l in 0.45f64..1.95, t in TEMPERATURE_MIN_C..=TEMPERATURE_MAX_C) {
            let m = DispersionModel::lithium_niobate();
            for pol in [Polarization::TE, Polarization::TM] {
                let full = m.group_index(pol, l, t).unwrap();
                let half = m.group_index_with_step(pol, l, t, GROUP_INDEX_STEP_UM / 2.0).unwrap();
                prop_assert!(((full - half) / half).abs() < 1e-6);
            }
        }

        #[test]
        fn wavenumber_linear_in_index(offset in -0.05f64..0.05, l in 0.5f64..1.9, t in 20.0f64..250.0) {
            let base = DispersionModel::lithium_niobate();
            let n0 = base.effective_index(Polarization::TE, l, t).unwrap();
            let m = base.with_corrections(WaveguideCorrection::new(offset, 0.0), WaveguideCorrection::default());
            let b0 = base.wavenumber(Polarization::TE, l, t).unwrap();
            let b1 = m.wavenumber(Polarization::TE, l, t).unwrap();
            prop_assert!((b1 - b0 * (n0 + offset) / n0).abs() < 1e-12 * b0);
        }
    }
}
