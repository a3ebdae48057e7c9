//! Scenario configuration: one JSON document with a section per subcommand.
//!
//! Every section is optional and falls back to the reference-device values,
//! so `{}` is a complete scenario. Unknown fields are rejected. The
//! published schema lives in `config.schema.json` next to this crate.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use qpm_core::bellstats::DetectorModel;
use qpm_core::biphoton::{Arm, CompensationSpec, FilterShape, FilterSpec};
use qpm_core::device;
use qpm_core::grating::InterlacedSpec;
use qpm_core::phasematch::CalibrationConstraint;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_JSON: &str = include_str!("../config.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dispersion: DispersionSection,
    pub grating: InterlacedSpec,
    pub operating: OperatingSection,
    pub tuning_curve: TuningSection,
    pub grating_spectrum: GratingSpectrumSection,
    pub pdc_spectrum: PdcSpectrumSection,
    pub filters: Vec<FilterEntry>,
    pub visibility: VisibilitySection,
    pub detectors: DetectorModel,
    pub simulate: SimulateSection,
    pub budget: BudgetSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            output_dir: PathBuf::from("out"),
            dispersion: DispersionSection::default(),
            grating: device::interlaced_spec(),
            operating: OperatingSection::default(),
            tuning_curve: TuningSection::default(),
            grating_spectrum: GratingSpectrumSection::default(),
            pdc_spectrum: PdcSpectrumSection::default(),
            filters: default_filters(),
            visibility: VisibilitySection::default(),
            detectors: DetectorModel::uniform(0.03, 2e3, device::COINCIDENCE_WINDOW_NS),
            simulate: SimulateSection::default(),
            budget: BudgetSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionSection {
    /// JSON model file (bare model or a `calibrate` output); bulk lithium
    /// niobate when absent.
    pub model_path: Option<PathBuf>,
    /// Fit the waveguide corrections to `constraints` before use.
    pub calibrate: bool,
    /// Phase-matching conditions for the fit; the reference operating point
    /// when absent.
    pub constraints: Option<Vec<CalibrationConstraint>>,
}

impl Default for DispersionSection {
    fn default() -> Self {
        Self {
            model_path: None,
            calibrate: true,
            constraints: None,
        }
    }
}

impl DispersionSection {
    pub fn constraints(&self) -> Vec<CalibrationConstraint> {
        self.constraints
            .clone()
            .unwrap_or_else(|| device::operating_constraints().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatingSection {
    pub pump_um: f64,
    pub temperature_c: f64,
    /// Second temperature used to show the peaks moving apart.
    pub separated_temperature_c: f64,
}

impl Default for OperatingSection {
    fn default() -> Self {
        Self {
            pump_um: device::PUMP_UM,
            temperature_c: device::OPERATING_TEMPERATURE_C,
            separated_temperature_c: device::SEPARATED_TEMPERATURE_C,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub pump_min_um: f64,
    pub pump_max_um: f64,
    pub pump_samples: usize,
    pub signal_min_um: f64,
    pub signal_max_um: f64,
    pub signal_samples: usize,
    /// Operating temperature when absent.
    pub temperature_c: Option<f64>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            pump_min_um: 0.77,
            pump_max_um: 0.79,
            pump_samples: 201,
            signal_min_um: 1.4,
            signal_max_um: 1.7,
            signal_samples: 2000,
            temperature_c: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GratingSpectrumSection {
    pub k_min_rad_per_um: f64,
    pub k_max_rad_per_um: f64,
    pub points: usize,
    pub sh_min_um: f64,
    pub sh_max_um: f64,
    pub sh_points: usize,
    /// Relative power above which a local maximum counts as dominant.
    pub dominant_threshold: f64,
    pub satellite_threshold: f64,
}

impl Default for GratingSpectrumSection {
    fn default() -> Self {
        Self {
            k_min_rad_per_um: 0.60,
            k_max_rad_per_um: 0.74,
            points: 10_000,
            sh_min_um: 1.5,
            sh_max_um: 1.6,
            sh_points: 10_001,
            dominant_threshold: 0.6,
            satellite_threshold: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdcSpectrumSection {
    /// Grid half-width around the operating signal wavelength.
    pub half_span_nm: f64,
    pub points: usize,
    /// Quadratic grating phase rate (z−L/2)², rad/µm²; 0 disables it.
    pub chirp_rate_rad_per_um2: f64,
}

impl Default for PdcSpectrumSection {
    fn default() -> Self {
        Self {
            half_span_nm: 3.0,
            points: 2401,
            chirp_rate_rad_per_um2: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub name: String,
    pub center_um: f64,
    pub fwhm_nm: f64,
    pub shape: FilterShape,
    pub arm: Arm,
}

impl FilterEntry {
    pub fn spec(&self) -> FilterSpec {
        FilterSpec {
            center_um: self.center_um,
            fwhm_nm: self.fwhm_nm,
            shape: self.shape,
        }
    }
}

fn default_filters() -> Vec<FilterEntry> {
    vec![
        FilterEntry {
            name: "cwdm".into(),
            center_um: device::SIGNAL_PORT_UM,
            fwhm_nm: 13.0,
            shape: FilterShape::Rectangular,
            arm: Arm::Signal,
        },
        FilterEntry {
            name: "fbg".into(),
            center_um: 1.55005,
            fwhm_nm: 0.5,
            shape: FilterShape::Gaussian,
            arm: Arm::Signal,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilitySection {
    pub phase_rad: f64,
    /// Pump powers at which visibilities are predicted; α follows from the
    /// budget section.
    pub pump_powers_mw: Vec<f64>,
    /// Extra mean pair numbers evaluated directly.
    pub alphas: Vec<f64>,
    pub compensation: Option<CompensationSpec>,
}

impl Default for VisibilitySection {
    fn default() -> Self {
        Self {
            phase_rad: 0.0,
            pump_powers_mw: vec![device::REDUCED_POWER_MW, device::FULL_POWER_MW],
            alphas: vec![0.03, 0.08],
            compensation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub pump_power_mw: f64,
    /// Source visibility; the multi-pair limit at `pump_power_mw` when absent.
    pub source_visibility: Option<f64>,
    pub phase_rad: f64,
    pub duration_s: f64,
    pub fringe_samples: usize,
    /// Independent repetitions for the estimator statistics.
    pub runs: usize,
    /// Also write raw time-tag streams of the CHSH settings.
    pub timetags: bool,
    pub timetag_duration_s: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            pump_power_mw: device::REDUCED_POWER_MW,
            source_visibility: None,
            phase_rad: 0.0,
            duration_s: 1.0,
            fringe_samples: 16,
            runs: 100,
            timetags: false,
            timetag_duration_s: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSource {
    /// `measured_bandwidth_nm`.
    Measured,
    /// FWHM of the modelled PDC spectrum at the operating point.
    Modelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub sh_efficiency_per_w: f64,
    pub kappa: f64,
    pub measured_bandwidth_nm: f64,
    pub bandwidth_source: BandwidthSource,
    /// Pairs per pump photon used for rates; derived from SH when absent.
    pub pdc_efficiency: Option<f64>,
    pub pump_powers_mw: Vec<f64>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            sh_efficiency_per_w: device::SH_EFFICIENCY_PER_W,
            kappa: qpm_core::budget::DEFAULT_KAPPA,
            measured_bandwidth_nm: device::MEASURED_BANDWIDTH_NM,
            bandwidth_source: BandwidthSource::Measured,
            pdc_efficiency: Some(device::MEASURED_PDC_EFFICIENCY),
            pump_powers_mw: vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
        }
    }
}

fn field_error(path: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field_error(path, format!("must be positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(field_error(path, format!("must be non-negative, got {v}")))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(field_error(path, format!("must be at least {min}, got {v}")))
    }
}

impl Scenario {
    /// Parses and validates; errors carry the JSON path and line/column.
    pub fn from_json_str(s: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config {
                path: e.path().to_string(),
                reason: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.grating
            .validate()
            .map_err(|e| field_error("grating", e.to_string()))?;
        positive("operating.pump_um", self.operating.pump_um)?;
        positive("operating.temperature_c", self.operating.temperature_c)?;
        positive("operating.separated_temperature_c", self.operating.separated_temperature_c)?;

        let t = &self.tuning_curve;
        if !(t.pump_max_um > t.pump_min_um) {
            return Err(field_error("tuning_curve.pump_max_um", "must exceed pump_min_um"));
        }
        if !(t.signal_max_um > t.signal_min_um) {
            return Err(field_error("tuning_curve.signal_max_um", "must exceed signal_min_um"));
        }
        at_least("tuning_curve.pump_samples", t.pump_samples, 2)?;
        at_least("tuning_curve.signal_samples", t.signal_samples, 2)?;

        let g = &self.grating_spectrum;
        if !(g.k_max_rad_per_um > g.k_min_rad_per_um) || g.k_min_rad_per_um < 0.0 {
            return Err(field_error("grating_spectrum.k_max_rad_per_um", "need 0 ≤ k_min < k_max"));
        }
        at_least("grating_spectrum.points", g.points, 2)?;
        at_least("grating_spectrum.sh_points", g.sh_points, 2)?;
        if !(g.sh_min_um >= 1.5 && g.sh_max_um <= 1.6 && g.sh_max_um > g.sh_min_um) {
            return Err(field_error("grating_spectrum.sh_max_um", "SH grid must lie inside [1.5, 1.6] µm"));
        }
        for (name, v) in [("dominant_threshold", g.dominant_threshold), ("satellite_threshold", g.satellite_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(field_error(&format!("grating_spectrum.{name}"), "must lie in (0, 1)"));
            }
        }

        positive("pdc_spectrum.half_span_nm", self.pdc_spectrum.half_span_nm)?;
        at_least("pdc_spectrum.points", self.pdc_spectrum.points, 3)?;
        if !self.pdc_spectrum.chirp_rate_rad_per_um2.is_finite() {
            return Err(field_error("pdc_spectrum.chirp_rate_rad_per_um2", "must be finite"));
        }

        for (i, f) in self.filters.iter().enumerate() {
            positive(&format!("filters[{i}].center_um"), f.center_um)?;
            positive(&format!("filters[{i}].fwhm_nm"), f.fwhm_nm)?;
        }
        for (i, &p) in self.visibility.pump_powers_mw.iter().enumerate() {
            non_negative(&format!("visibility.pump_powers_mw[{i}]"), p)?;
        }
        for (i, &a) in self.visibility.alphas.iter().enumerate() {
            non_negative(&format!("visibility.alphas[{i}]"), a)?;
        }

        self.detectors
            .validate()
            .map_err(|e| field_error("detectors", e.to_string()))?;

        let s = &self.simulate;
        non_negative("simulate.pump_power_mw", s.pump_power_mw)?;
        if let Some(v) = s.source_visibility {
            if !(0.0..=1.0).contains(&v) {
                return Err(field_error("simulate.source_visibility", "must lie in [0, 1]"));
            }
        }
        positive("simulate.duration_s", s.duration_s)?;
        at_least("simulate.fringe_samples", s.fringe_samples, 4)?;
        at_least("simulate.runs", s.runs, 1)?;
        positive("simulate.timetag_duration_s", s.timetag_duration_s)?;

        let b = &self.budget;
        non_negative("budget.sh_efficiency_per_w", b.sh_efficiency_per_w)?;
        positive("budget.kappa", b.kappa)?;
        positive("budget.measured_bandwidth_nm", b.measured_bandwidth_nm)?;
        if let Some(e) = b.pdc_efficiency {
            non_negative("budget.pdc_efficiency", e)?;
        }
        for (i, &p) in b.pump_powers_mw.iter().enumerate() {
            non_negative(&format!("budget.pump_powers_mw[{i}]"), p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_scenario() {
        assert_eq!(Scenario::from_json_str("{}").unwrap(), Scenario::default());
    }

    #[test]
    fn default_round_trips() {
        let d = Scenario::default();
        assert_eq!(Scenario::from_json_str(&d.to_canonical_json()).unwrap(), d);
    }

    #[test]
    fn unknown_field_reports_path_and_line() {
        let err = Scenario::from_json_str("{\n  \"budget\": {\n    \"kapa\": 2\n  }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("budget"), "{msg}");
        assert!(msg.contains("kapa") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = Scenario::from_json_str(r#"{"simulate": {"duration_s": -1}}"#).unwrap_err();
        assert!(err.to_string().contains("simulate.duration_s"));
        let err = Scenario::from_json_str(r#"{"grating_spectrum": {"sh_min_um": 1.4}}"#).unwrap_err();
        assert!(err.to_string().contains("grating_spectrum"));
    }

    #[test]
    fn schema_lists_every_section() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA_JSON).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let default = serde_json::to_value(Scenario::default()).unwrap();
        let sections = default.as_object().unwrap();
        let mut a: Vec<_> = props.keys().collect();
        let mut b: Vec<_> = sections.keys().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(schema["additionalProperties"], serde_json::Value::Bool(false));
        // every object-valued section spells out the same fields
        for (name, value) in sections {
            if let Some(obj) = value.as_object() {
                let mut fields: Vec<_> = obj.keys().collect();
                let mut listed: Vec<_> = props[name]["properties"].as_object().unwrap().keys().collect();
                fields.sort();
                listed.sort();
                assert_eq!(fields, listed, "section {name}");
            }
        }
    }

    #[test]
    fn shipped_default_config_is_the_default() {
        let text = include_str!("../../../configs/default.json");
        assert_eq!(Scenario::from_json_str(text).unwrap(), Scenario::default());
    }
}
