//! Subcommands. Each one reads what it needs from the scenario, writes its
//! files through [`Output`] and returns a JSON summary for the terminal.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_8;
use std::path::{Path, PathBuf};

use qpm_core::bellstats::{
    bootstrap_chsh, bootstrap_visibility, chsh, chsh_closed_form, count_coincidences, net_visibility, read_counts_csv, read_time_tags,
    simulate_experiment, simulate_time_tags, sub_seed, write_counts_csv, write_time_tags, AnalyzerSetting, BootstrapSummary, ChshAngles,
    ChshResult, CorrelationEstimate, CountRecord, FringeAxis, SourceModel,
};
use qpm_core::biphoton::{
    apply_filter, assemble_state, compensation_residual, mean_pair_number, multiphoton_visibility, predicted_visibility,
    spectral_overlap, visibility_from_overlap, Basis, BiphotonState,
};
use qpm_core::budget::{brightness, budget_table, pair_rate, EfficiencyRecord};
use qpm_core::dispersion::{DispersionModel, Polarization};
use qpm_core::grating::{build_interlaced, linear_chirp, linspace, spectrum, InterlacedGrating, Peak};
use qpm_core::phasematch::{
    calibrate_model, constraint_residuals, find_operating_points, process_spectrum, sh_spectrum, solve_tuning_curve, FreeParameter,
    OperatingPoint, PdcSpectrum, ProcessSpec, TuningBranch, TuningOptions,
};
use qpm_core::units::{bandwidth_hz, um_to_nm, TWO_PI};

use crate::config::{BandwidthSource, Scenario};
use crate::output::{envelope_data, read_to_string, sha256_hex, Format, Output, Table};
use crate::{report, CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Phase-matching loci λ_s(λ_p) of both periods and their crossings
    TuningCurve,
    /// Fourier spectrum of the interlaced grating and its SH response
    GratingSpectrum,
    /// PDC spectra of both processes at the operating and separated temperatures
    PdcSpectrum,
    /// Fit the waveguide index corrections and write the model
    Calibrate,
    /// Solve for the shared phase-matching point of both periods
    OperatingPoint,
    /// Predicted H/V and D/A visibilities versus pair number and filtering
    Visibility,
    /// Monte-Carlo coincidence counts for fringe scans and the CHSH settings
    Simulate,
    /// Visibility and S from counts or time tags
    Analyze {
        /// Counts CSV, time-tag manifest, or a `simulate` output directory
        /// (default: the output directory)
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Efficiency, pair rate and brightness table
    Budget,
    /// Evaluate every reproduction criterion and write a report
    ReproducePaper {
        /// Exit with status 3 when a criterion fails
        #[arg(long)]
        strict: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TuningCurve => "tuning-curve",
            Command::GratingSpectrum => "grating-spectrum",
            Command::PdcSpectrum => "pdc-spectrum",
            Command::Calibrate => "calibrate",
            Command::OperatingPoint => "operating-point",
            Command::Visibility => "visibility",
            Command::Simulate => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Budget => "budget",
            Command::ReproducePaper { .. } => "reproduce-paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Format,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            config: None,
            out: None,
            seed: None,
            format: Format::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
    /// `Some(false)` when a reproduction criterion failed.
    pub criteria_passed: Option<bool>,
}

/// Loads the scenario, applies flag overrides and runs one subcommand.
pub fn run(command: &Command, options: &RunOptions) -> Result<RunOutcome> {
    let mut scenario = match &options.config {
        Some(p) => Scenario::from_file(p)?,
        None => Scenario::default(),
    };
    if let Some(out) = &options.out {
        scenario.output_dir = out.clone();
    }
    if let Some(seed) = options.seed {
        scenario.seed = seed;
    }
    run_scenario(command, &scenario, options.format)
}

pub fn run_scenario(command: &Command, scenario: &Scenario, format: Format) -> Result<RunOutcome> {
    scenario.validate()?;
    let out = Output::new(scenario.output_dir.clone(), format, scenario, command.name());
    let mut criteria_passed = None;
    let summary = match command {
        Command::TuningCurve => tuning_curve(scenario, &out)?,
        Command::GratingSpectrum => grating_spectrum(scenario, &out)?,
        Command::PdcSpectrum => pdc_spectrum_cmd(scenario, &out)?,
        Command::Calibrate => calibrate(scenario, &out)?,
        Command::OperatingPoint => operating_point_cmd(scenario, &out)?,
        Command::Visibility => visibility(scenario, &out)?,
        Command::Simulate => simulate(scenario, &out)?,
        Command::Analyze { input } => {
            let input = input.clone().unwrap_or_else(|| scenario.output_dir.clone());
            analyze(scenario, &out, &input)?
        }
        Command::Budget => budget(scenario, &out)?,
        Command::ReproducePaper { .. } => {
            let r = report::evaluate(scenario)?;
            report::write(&r, &out)?;
            criteria_passed = Some(r.all_passed());
            serde_json::to_value(r.summary()).expect("summary serializes")
        }
    };
    Ok(RunOutcome {
        files: out.written(),
        summary,
        criteria_passed,
    })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summary serializes")
}

// ---------------------------------------------------------------- model

/// Base model (file or bulk) with the waveguide fit applied when enabled.
pub fn load_model(scenario: &Scenario) -> Result<DispersionModel> {
    let base = match &scenario.dispersion.model_path {
        Some(p) => {
            let text = read_to_string(p)?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: "dispersion.model_path".into(),
                reason: format!("{}: {e}", p.display()),
            })?;
            let value = match envelope_data(value) {
                serde_json::Value::Object(mut m) if m.contains_key("model") => m.remove("model").unwrap(),
                v => v,
            };
            DispersionModel::from_json_str(&value.to_string())?
        }
        None => DispersionModel::lithium_niobate(),
    };
    if scenario.dispersion.calibrate {
        Ok(calibrate_model(&base, &scenario.dispersion.constraints())?)
    } else {
        Ok(base)
    }
}

/// Operating point at the configured pump nearest the configured temperature.
pub fn operating_point(model: &DispersionModel, scenario: &Scenario) -> Result<OperatingPoint> {
    let g = &scenario.grating;
    let points = find_operating_points(
        model,
        g.period1_um,
        g.period2_um,
        FreeParameter::Temperature {
            pump_um: scenario.operating.pump_um,
        },
    )?;
    let target = scenario.operating.temperature_c;
    points
        .into_iter()
        .min_by(|a, b| (a.temperature_c - target).abs().total_cmp(&(b.temperature_c - target).abs()))
        .ok_or_else(|| CliError::NotConverged(format!("no operating point at λ_p = {} µm in 20–250 °C", scenario.operating.pump_um)))
}

pub fn grating(scenario: &Scenario) -> Result<InterlacedGrating> {
    Ok(build_interlaced(&scenario.grating)?)
}

fn signal_grid(scenario: &Scenario, center_um: f64) -> Vec<f64> {
    let h = scenario.pdc_spectrum.half_span_nm * 1e-3;
    linspace(center_um - h, center_um + h, scenario.pdc_spectrum.points)
}

/// PDC spectra of both processes, with the configured chirp when nonzero.
pub fn pdc_spectra(model: &DispersionModel, scenario: &Scenario, g: &InterlacedGrating, temperature_c: f64, center_um: f64) -> Result<PdcSpectrum> {
    let grid = signal_grid(scenario, center_um);
    let rate = scenario.pdc_spectrum.chirp_rate_rad_per_um2;
    let chirp = linear_chirp(&g.pattern, rate);
    let perturbation: Option<&(dyn Fn(f64) -> f64 + Sync)> = if rate != 0.0 { Some(&chirp) } else { None };
    let pump = scenario.operating.pump_um;
    let one = |pol| process_spectrum(model, &g.pattern, pol, pump, temperature_c, &grid, perturbation);
    Ok(PdcSpectrum {
        signal_te: one(Polarization::TE)?,
        signal_tm: one(Polarization::TM)?,
    })
}

/// |H⟩_s|V⟩_i is the TE-signal process.
pub fn biphoton_state(pdc: &PdcSpectrum, phase_rad: f64) -> Result<BiphotonState> {
    Ok(assemble_state(pdc.signal_te.clone(), pdc.signal_tm.clone(), phase_rad, None)?)
}

// ---------------------------------------------------------------- budget

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetNumbers {
    pub signal_um: f64,
    pub pump_um: f64,
    pub bandwidth_source: BandwidthSource,
    pub bandwidth_nm: f64,
    pub bandwidth_hz: f64,
    pub kappa: f64,
    /// η_PDC derived from the SH efficiency.
    pub record: EfficiencyRecord,
    /// η_PDC used for rates: configured, or the derived one.
    pub pdc_efficiency_used: f64,
    pub brightness_pairs_per_s_mw_ghz: f64,
    pub brightness_from_shg_pairs_per_s_mw_ghz: f64,
}

impl BudgetNumbers {
    pub fn pair_rate_per_s(&self, pump_power_mw: f64) -> Result<f64> {
        Ok(pair_rate(self.pdc_efficiency_used, pump_power_mw, self.pump_um)?)
    }

    pub fn alpha(&self, pump_power_mw: f64, window_ns: f64) -> Result<f64> {
        Ok(mean_pair_number(self.pair_rate_per_s(pump_power_mw)?, window_ns)?)
    }
}

pub fn budget_numbers(model: &DispersionModel, scenario: &Scenario) -> Result<BudgetNumbers> {
    let b = &scenario.budget;
    let op = operating_point(model, scenario)?;
    let bandwidth_nm = match b.bandwidth_source {
        BandwidthSource::Measured => b.measured_bandwidth_nm,
        BandwidthSource::Modelled => {
            let pdc = pdc_spectra(model, scenario, &grating(scenario)?, op.temperature_c, op.signal_um)?;
            0.5 * (pdc.signal_te.fwhm_nm + pdc.signal_tm.fwhm_nm)
        }
    };
    let dnu = bandwidth_hz(op.signal_um, bandwidth_nm);
    let record = EfficiencyRecord::from_shg(b.sh_efficiency_per_w, op.signal_um, op.pump_um, dnu, b.kappa)?;
    let used = b.pdc_efficiency.unwrap_or(record.pdc_efficiency);
    Ok(BudgetNumbers {
        signal_um: op.signal_um,
        pump_um: op.pump_um,
        bandwidth_source: b.bandwidth_source,
        bandwidth_nm,
        bandwidth_hz: dnu,
        kappa: b.kappa,
        record,
        pdc_efficiency_used: used,
        brightness_pairs_per_s_mw_ghz: brightness(used, op.pump_um, dnu * 1e-9)?,
        brightness_from_shg_pairs_per_s_mw_ghz: brightness(record.pdc_efficiency, op.pump_um, dnu * 1e-9)?,
    })
}

fn budget(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let numbers = budget_numbers(&model, scenario)?;
    let window = scenario.detectors.window_ns;
    let rows = budget_table(numbers.pdc_efficiency_used, numbers.pump_um, &scenario.budget.pump_powers_mw, window)?;
    let mut t = Table::new(["pump_power_mw", "pair_rate_per_s", "mean_pair_number", "multiphoton_visibility"])
        .meta("pdc_efficiency", numbers.pdc_efficiency_used)
        .meta("window_ns", window);
    for r in &rows {
        t.push(vec![
            r.pump_power_mw.into(),
            r.pair_rate_per_s.into(),
            r.mean_pair_number.into(),
            multiphoton_visibility(r.mean_pair_number)?.into(),
        ]);
    }
    out.write_table("budget_table", &t)?;
    out.write_json("budget.json", &numbers)?;
    out.write_json("efficiency_record.json", &numbers.record)?;
    Ok(to_value(&numbers))
}

// ---------------------------------------------------------------- calibrate / operating point

#[derive(Clone, Debug, Serialize)]
struct CalibrationOutput {
    model: DispersionModel,
    constraints: Vec<qpm_core::phasematch::CalibrationConstraint>,
    residuals_before_rad_per_um: Vec<f64>,
    residuals_after_rad_per_um: Vec<f64>,
}

fn calibrate(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let mut uncalibrated = scenario.clone();
    uncalibrated.dispersion.calibrate = false;
    let base = load_model(&uncalibrated)?;
    let constraints = scenario.dispersion.constraints();
    let model = calibrate_model(&base, &constraints)?;
    let c = CalibrationOutput {
        residuals_before_rad_per_um: constraint_residuals(&base, &constraints)?,
        residuals_after_rad_per_um: constraint_residuals(&model, &constraints)?,
        model,
        constraints,
    };
    out.write_json("calibration.json", &c)?;
    Ok(to_value(&c))
}

#[derive(Clone, Debug, Serialize)]
struct OperatingOutput {
    /// Pump fixed at the configured wavelength, temperature solved.
    at_pump: Vec<OperatingPoint>,
    /// Temperature fixed at the configured value, pump solved.
    at_temperature: Vec<OperatingPoint>,
    selected: OperatingPoint,
    group_delay_difference_ps: f64,
}

fn operating_point_cmd(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let g = &scenario.grating;
    let selected = operating_point(&model, scenario)?;
    let at_pump = find_operating_points(
        &model,
        g.period1_um,
        g.period2_um,
        FreeParameter::Temperature {
            pump_um: scenario.operating.pump_um,
        },
    )?;
    let at_temperature = find_operating_points(
        &model,
        g.period1_um,
        g.period2_um,
        FreeParameter::Pump {
            temperature_c: scenario.operating.temperature_c,
        },
    )?;
    let o = OperatingOutput {
        group_delay_difference_ps: model.group_delay_difference(selected.signal_um, selected.temperature_c, g.length_mm)?,
        at_pump,
        at_temperature,
        selected,
    };
    out.write_json("operating_point.json", &o)?;
    Ok(to_value(&o))
}

// ---------------------------------------------------------------- tuning curve

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub pump_um: f64,
    pub signal_um: f64,
    pub idler_um: f64,
    pub period1_signal_pol: Polarization,
    pub period2_signal_pol: Polarization,
    pub degenerate: bool,
}

/// Points where a Λ1 branch and a Λ2 branch of opposite signal polarization
/// share a signal wavelength, by linear interpolation on the common pump grid.
pub fn branch_crossings(b1: &TuningBranch, b2: &TuningBranch) -> Vec<Crossing> {
    if b1.signal_pol == b2.signal_pol {
        return Vec::new();
    }
    let lookup = |p: f64| b2.points.iter().find(|q| q.pump_um == p).map(|q| q.signal_um);
    let mut out = Vec::new();
    let last = b1.points.len().saturating_sub(2);
    for (k, w) in b1.points.windows(2).enumerate() {
        let (Some(s0), Some(s1)) = (lookup(w[0].pump_um), lookup(w[1].pump_um)) else {
            continue;
        };
        let d0 = w[0].signal_um - s0;
        let d1 = w[1].signal_um - s1;
        // a zero on a grid point belongs to the window it starts
        if d0 == 0.0 || (d1 != 0.0 && (d0 < 0.0) != (d1 < 0.0)) || (k == last && d1 == 0.0) {
            let t = if d0 == d1 { 0.0 } else { d0 / (d0 - d1) };
            let pump = w[0].pump_um + t * (w[1].pump_um - w[0].pump_um);
            let signal = w[0].signal_um + t * (w[1].signal_um - w[0].signal_um);
            let idler = 1.0 / (1.0 / pump - 1.0 / signal);
            out.push(Crossing {
                pump_um: pump,
                signal_um: signal,
                idler_um: idler,
                period1_signal_pol: b1.signal_pol,
                period2_signal_pol: b2.signal_pol,
                degenerate: (signal - idler).abs() < 1e-3,
            });
        }
    }
    out
}

pub struct TuningResult {
    pub temperature_c: f64,
    pub branches: Vec<TuningBranch>,
    pub crossings: Vec<Crossing>,
}

pub fn tuning_result(model: &DispersionModel, scenario: &Scenario) -> Result<TuningResult> {
    let t = &scenario.tuning_curve;
    let temperature = t.temperature_c.unwrap_or(scenario.operating.temperature_c);
    let options = TuningOptions {
        pump_samples: t.pump_samples,
        signal_samples: t.signal_samples,
        signal_range_um: (t.signal_min_um, t.signal_max_um),
    };
    let mut branches = Vec::new();
    for period in [scenario.grating.period1_um, scenario.grating.period2_um] {
        let spec = ProcessSpec::type_ii(Polarization::TM, period);
        branches.extend(solve_tuning_curve(model, &spec, (t.pump_min_um, t.pump_max_um), temperature, &options)?);
    }
    let mut crossings = Vec::new();
    for b1 in branches.iter().filter(|b| b.period_um == scenario.grating.period1_um) {
        for b2 in branches.iter().filter(|b| b.period_um == scenario.grating.period2_um) {
            crossings.extend(branch_crossings(b1, b2));
        }
    }
    crossings.sort_by(|a, b| a.pump_um.total_cmp(&b.pump_um).then(a.signal_um.total_cmp(&b.signal_um)));
    Ok(TuningResult {
        temperature_c: temperature,
        branches,
        crossings,
    })
}

fn tuning_curve(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let r = tuning_result(&model, scenario)?;
    let mut t = Table::new(["period_um", "branch", "signal_pol", "idler_pol", "pump_um", "signal_um", "idler_um"]).meta("temperature_c", r.temperature_c);
    for (i, b) in r.branches.iter().enumerate() {
        for p in &b.points {
            t.push(vec![
                b.period_um.into(),
                i.into(),
                b.signal_pol.to_string().into(),
                b.idler_pol.to_string().into(),
                p.pump_um.into(),
                p.signal_um.into(),
                p.idler_um.into(),
            ]);
        }
    }
    out.write_table("tuning_curve", &t)?;
    let g = &scenario.grating;
    let refined = find_operating_points(&model, g.period1_um, g.period2_um, FreeParameter::Pump { temperature_c: r.temperature_c })?;
    let data = serde_json::json!({
        "temperature_c": r.temperature_c,
        "branch_count": r.branches.len(),
        "crossings": r.crossings,
        "refined": refined,
    });
    out.write_json("tuning_crossings.json", &data)?;
    if !r.crossings.iter().any(|c| !c.degenerate) {
        return Err(CliError::NotConverged("the two periods' branches do not cross away from degeneracy".into()));
    }
    Ok(data)
}

// ---------------------------------------------------------------- grating spectrum

#[derive(Clone, Debug, Serialize)]
pub struct SatelliteCheck {
    pub family: usize,
    pub order: i32,
    pub predicted_k: f64,
    pub found_k: Option<f64>,
    pub relative_power: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GratingAnalysis {
    pub domain_count: usize,
    pub length_um: f64,
    pub fourier_bin_rad_per_um: f64,
    pub expected_k: [f64; 2],
    pub dominant: Vec<Peak>,
    pub superperiod_um: [f64; 2],
    pub satellites: Vec<SatelliteCheck>,
    pub gaps_um_min: f64,
    pub gaps_um_max: f64,
    pub poled_fraction: f64,
}

/// Local maxima of a sampled curve at or above `floor` (absolute).
fn local_maxima(values: &[f64], floor: f64) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] >= floor && values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

pub fn analyse_grating(scenario: &Scenario, g: &InterlacedGrating, k: &[f64], power: &[f64]) -> GratingAnalysis {
    let gs = &scenario.grating_spectrum;
    let length = g.pattern.length_um();
    let bin = TWO_PI / length;
    let max = power.iter().cloned().fold(0.0, f64::max);
    let dominant: Vec<Peak> = qpm_core::grating::find_peaks(k, power, gs.dominant_threshold);
    let superperiod = [g.mean_superperiod_um(0), g.mean_superperiod_um(1)];
    let expected = [TWO_PI / g.spec.period1_um, TWO_PI / g.spec.period2_um];
    let maxima = local_maxima(power, gs.satellite_threshold * max);
    let mut satellites = Vec::new();
    for family in 0..2 {
        let ks = TWO_PI / superperiod[family];
        for order in [-1, 1] {
            let predicted = expected[family] + order as f64 * ks;
            if predicted < k[0] || predicted > k[k.len() - 1] {
                continue;
            }
            let near = maxima
                .iter()
                .copied()
                .filter(|&i| (k[i] - predicted).abs() <= 2.0 * bin)
                .max_by(|&a, &b| power[a].total_cmp(&power[b]));
            satellites.push(SatelliteCheck {
                family,
                order,
                predicted_k: predicted,
                found_k: near.map(|i| k[i]),
                relative_power: near.map(|i| power[i] / max),
            });
        }
    }
    let gaps = g.gaps_um();
    GratingAnalysis {
        domain_count: g.pattern.domain_count(),
        length_um: length,
        fourier_bin_rad_per_um: bin,
        expected_k: expected,
        dominant,
        superperiod_um: superperiod,
        satellites,
        gaps_um_min: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
        gaps_um_max: gaps.iter().cloned().fold(0.0, f64::max),
        poled_fraction: g.poled_fraction(),
    }
}

fn grating_spectrum(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let gs = &scenario.grating_spectrum;
    let g = grating(scenario)?;
    let spec = spectrum(&g.pattern, gs.k_min_rad_per_um, gs.k_max_rad_per_um, gs.points)?;
    let analysis = analyse_grating(scenario, &g, &spec.k, &spec.power);

    let mut t = Table::new(["k_rad_per_um", "power"]);
    for (k, p) in spec.k.iter().zip(&spec.power) {
        t.push(vec![(*k).into(), (*p).into()]);
    }
    out.write_table("grating_spectrum", &t)?;

    let mut d = Table::new(["boundary_um"])
        .meta("start_sign", g.pattern.start_sign())
        .meta("length_um", g.pattern.length_um());
    for &b in g.pattern.boundaries_um() {
        d.push(vec![b.into()]);
    }
    out.write_table("grating_domains", &d)?;

    let model = load_model(scenario)?;
    let sh_grid = linspace(gs.sh_min_um, gs.sh_max_um, gs.sh_points);
    let sh = sh_spectrum(&model, &g.pattern, &sh_grid, scenario.operating.temperature_c)?;
    let mut s = Table::new(["fundamental_um", "mismatch_rad_per_um", "intensity"]).meta("temperature_c", sh.temperature_c);
    for i in 0..sh.fundamental_um.len() {
        s.push(vec![sh.fundamental_um[i].into(), sh.mismatch[i].into(), sh.intensity[i].into()]);
    }
    out.write_table("sh_spectrum", &s)?;

    let data = serde_json::json!({
        "grating": analysis,
        "sh_peaks": sh.peaks(gs.dominant_threshold),
    });
    out.write_json("grating_peaks.json", &data)?;
    Ok(data)
}

// ---------------------------------------------------------------- PDC spectrum and visibility

fn pdc_table(pdc: &PdcSpectrum) -> Table {
    let te = &pdc.signal_te;
    let tm = &pdc.signal_tm;
    let mut t = Table::new(["signal_um", "idler_um", "intensity_te_signal", "intensity_tm_signal", "phase_te_signal_rad", "phase_tm_signal_rad"])
        .meta("temperature_c", te.temperature_c)
        .meta("pump_um", te.pump_um)
        .meta("fwhm_te_signal_nm", te.fwhm_nm)
        .meta("fwhm_tm_signal_nm", tm.fwhm_nm);
    let idler = te.idler_um();
    for i in 0..te.signal_um.len() {
        t.push(vec![
            te.signal_um[i].into(),
            idler[i].into(),
            te.amplitude[i].norm_sqr().into(),
            tm.amplitude[i].norm_sqr().into(),
            te.amplitude[i].arg().into(),
            tm.amplitude[i].arg().into(),
        ]);
    }
    t
}

#[derive(Clone, Debug, Serialize)]
struct SpectrumSummary {
    temperature_c: f64,
    fwhm_te_signal_nm: f64,
    fwhm_tm_signal_nm: f64,
    peak_te_signal_um: f64,
    peak_tm_signal_um: f64,
    peak_separation_nm: f64,
}

fn spectrum_summary(pdc: &PdcSpectrum) -> SpectrumSummary {
    SpectrumSummary {
        temperature_c: pdc.signal_te.temperature_c,
        fwhm_te_signal_nm: pdc.signal_te.fwhm_nm,
        fwhm_tm_signal_nm: pdc.signal_tm.fwhm_nm,
        peak_te_signal_um: pdc.signal_te.peak_signal_um(),
        peak_tm_signal_um: pdc.signal_tm.peak_signal_um(),
        peak_separation_nm: um_to_nm((pdc.signal_te.peak_signal_um() - pdc.signal_tm.peak_signal_um()).abs()),
    }
}

fn pdc_spectrum_cmd(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let op = operating_point(&model, scenario)?;
    let g = grating(scenario)?;
    let at = pdc_spectra(&model, scenario, &g, scenario.operating.temperature_c, op.signal_um)?;
    let apart = pdc_spectra(&model, scenario, &g, scenario.operating.separated_temperature_c, op.signal_um)?;
    out.write_table("pdc_spectrum", &pdc_table(&at))?;
    out.write_table("pdc_spectrum_separated", &pdc_table(&apart))?;
    let state = biphoton_state(&at, scenario.visibility.phase_rad)?;
    out.write_json("biphoton_state.json", &state.to_record())?;
    let data = serde_json::json!({
        "operating_point": op,
        "operating": spectrum_summary(&at),
        "separated": spectrum_summary(&apart),
        "spectral_overlap": spectral_overlap(&state)?,
        "concurrence": state.concurrence()?,
        "group_delay_difference_ps": model.group_delay_difference(op.signal_um, scenario.operating.temperature_c, scenario.grating.length_mm)?,
    });
    out.write_json("pdc_spectrum_summary.json", &data)?;
    Ok(data)
}

#[derive(Clone, Debug, Serialize)]
struct FilterResult {
    name: String,
    spectral_overlap: f64,
    heralding_factor: f64,
    concurrence: f64,
    visibility_da: f64,
}

#[derive(Clone, Debug, Serialize)]
struct PowerPoint {
    pump_power_mw: f64,
    mean_pair_number: f64,
    visibility_hv: f64,
    visibility_da: f64,
}

fn visibility(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let op = operating_point(&model, scenario)?;
    let g = grating(scenario)?;
    let pdc = pdc_spectra(&model, scenario, &g, scenario.operating.temperature_c, op.signal_um)?;
    let state = biphoton_state(&pdc, scenario.visibility.phase_rad)?;
    let overlap = spectral_overlap(&state)?;
    let numbers = budget_numbers(&model, scenario)?;
    let window = scenario.detectors.window_ns;

    let mut powers = Vec::new();
    for &p in &scenario.visibility.pump_powers_mw {
        let alpha = numbers.alpha(p, window)?;
        powers.push(PowerPoint {
            pump_power_mw: p,
            mean_pair_number: alpha,
            visibility_hv: visibility_from_overlap(overlap, alpha, Basis::HV)?,
            visibility_da: visibility_from_overlap(overlap, alpha, Basis::DA)?,
        });
    }
    let mut alphas = Vec::new();
    for &a in &scenario.visibility.alphas {
        alphas.push(serde_json::json!({
            "mean_pair_number": a,
            "visibility_hv": predicted_visibility(&state, a, Basis::HV)?,
            "visibility_da": predicted_visibility(&state, a, Basis::DA)?,
        }));
    }
    let reference_alpha = powers.first().map(|p| p.mean_pair_number).unwrap_or(0.0);
    let mut filters = Vec::new();
    for f in &scenario.filters {
        let filtered = apply_filter(&state, &f.spec(), f.arm)?;
        filters.push(FilterResult {
            name: f.name.clone(),
            spectral_overlap: spectral_overlap(&filtered)?,
            heralding_factor: filtered.heralding_factor(),
            concurrence: filtered.concurrence()?,
            visibility_da: predicted_visibility(&filtered, reference_alpha, Basis::DA)?,
        });
    }

    let mut curve = Table::new(["mean_pair_number", "visibility_hv", "visibility_da"]).meta("spectral_overlap", overlap);
    for a in linspace(0.0, 0.2, 41) {
        curve.push(vec![
            a.into(),
            visibility_from_overlap(overlap, a, Basis::HV)?.into(),
            visibility_from_overlap(overlap, a, Basis::DA)?.into(),
        ]);
    }
    out.write_table("visibility_curve", &curve)?;

    let delay = model.group_delay_difference(op.signal_um, scenario.operating.temperature_c, scenario.grating.length_mm)?;
    let data = serde_json::json!({
        "spectral_overlap": overlap,
        "concurrence": state.concurrence()?,
        "pump_powers": powers,
        "alphas": alphas,
        "filters": filters,
        "group_delay_difference_ps": delay,
        "compensation_residual_ps": scenario.visibility.compensation.as_ref().map(|c| compensation_residual(delay, c)),
    });
    out.write_json("visibility.json", &data)?;
    Ok(data)
}

// ---------------------------------------------------------------- simulate / analyze

/// Plate scans and CHSH settings used by `simulate`.
pub struct SettingPlan {
    pub fringe_hv: Vec<AnalyzerSetting>,
    pub fringe_da: Vec<AnalyzerSetting>,
    pub chsh: [AnalyzerSetting; 4],
}

pub fn setting_plan(scenario: &Scenario) -> Result<SettingPlan> {
    let n = scenario.simulate.fringe_samples;
    Ok(SettingPlan {
        fringe_hv: qpm_core::bellstats::fringe_settings(0.0, 0.0, n)?,
        fringe_da: qpm_core::bellstats::fringe_settings(FRAC_PI_8, 0.0, n)?,
        chsh: ChshAngles::standard().analyzer_settings(0.0)?,
    })
}

/// Source seen by the simulator: pair rate from the budget at the configured
/// pump power, visibility as configured or the multi-pair limit.
pub fn simulated_source(model: &DispersionModel, scenario: &Scenario) -> Result<SourceModel> {
    let s = &scenario.simulate;
    let numbers = budget_numbers(model, scenario)?;
    let rate = numbers.pair_rate_per_s(s.pump_power_mw)?;
    let v = match s.source_visibility {
        Some(v) => v,
        None => multiphoton_visibility(mean_pair_number(rate, scenario.detectors.window_ns)?)?,
    };
    Ok(SourceModel {
        pair_rate_per_s: rate,
        visibility: v,
        phase_rad: s.phase_rad,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedRun {
    pub fringe_hv: Vec<CountRecord>,
    pub fringe_da: Vec<CountRecord>,
    pub chsh: Vec<CountRecord>,
}

/// Run `index` draws its three blocks from sub-seeds 3·index + {0, 1, 2}.
pub fn simulate_run(scenario: &Scenario, source: &SourceModel, plan: &SettingPlan, index: u64) -> Result<SimulatedRun> {
    let det = &scenario.detectors;
    let t = scenario.simulate.duration_s;
    let seed = |j: u64| sub_seed(scenario.seed, 3 * index + j);
    Ok(SimulatedRun {
        fringe_hv: simulate_experiment(source, det, &plan.fringe_hv, t, seed(0))?,
        fringe_da: simulate_experiment(source, det, &plan.fringe_da, t, seed(1))?,
        chsh: simulate_experiment(source, det, &plan.chsh, t, seed(2))?,
    })
}

/// Expected statistics of a simulated scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub visibility_hv: f64,
    pub visibility_da: f64,
    pub chsh_s: f64,
}

pub fn expected(source: &SourceModel) -> Result<Expected> {
    Ok(Expected {
        visibility_hv: source.visibility,
        visibility_da: source.visibility * source.phase_rad.cos().abs(),
        chsh_s: chsh_closed_form(source.visibility, source.phase_rad, &ChshAngles::standard())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub run: u64,
    pub visibility_hv: f64,
    pub sigma_visibility_hv: f64,
    pub visibility_da: f64,
    pub sigma_visibility_da: f64,
    pub chsh_s: f64,
    pub sigma_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStat {
    pub mean: f64,
    pub standard_error: f64,
    /// (mean − expected)/standard_error.
    pub z: f64,
}

fn mean_stat(values: &[f64], expected: f64) -> MeanStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    MeanStat {
        mean,
        standard_error: se,
        z: if se > 0.0 { (mean - expected) / se } else { 0.0 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub source: SourceModel,
    pub expected: Expected,
    pub runs: usize,
    pub visibility_hv: MeanStat,
    pub visibility_da: MeanStat,
    pub chsh_s: MeanStat,
    pub unreliable_fits: usize,
}

pub struct Simulation {
    pub source: SourceModel,
    pub first: SimulatedRun,
    pub rows: Vec<RunRow>,
    pub summary: SimulationSummary,
}

pub fn run_simulation(model: &DispersionModel, scenario: &Scenario) -> Result<Simulation> {
    let source = simulated_source(model, scenario)?;
    let plan = setting_plan(scenario)?;
    let exp = expected(&source)?;
    let angles = ChshAngles::standard();
    let mut rows = Vec::new();
    let mut first = None;
    let mut unreliable = 0;
    for run in 0..scenario.simulate.runs as u64 {
        let r = simulate_run(scenario, &source, &plan, run)?;
        let hv = net_visibility(&r.fringe_hv, FringeAxis::Signal)?;
        let da = net_visibility(&r.fringe_da, FringeAxis::Signal)?;
        let s = chsh(&r.chsh, &angles, 0.0)?;
        unreliable += usize::from(hv.unreliable) + usize::from(da.unreliable);
        rows.push(RunRow {
            run,
            visibility_hv: hv.visibility,
            sigma_visibility_hv: hv.sigma_visibility,
            visibility_da: da.visibility,
            sigma_visibility_da: da.sigma_visibility,
            chsh_s: s.s,
            sigma_s: s.sigma_s,
        });
        if first.is_none() {
            first = Some(r);
        }
    }
    let col = |f: fn(&RunRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let summary = SimulationSummary {
        source,
        expected: exp,
        runs: rows.len(),
        visibility_hv: mean_stat(&col(|r| r.visibility_hv), exp.visibility_hv),
        visibility_da: mean_stat(&col(|r| r.visibility_da), exp.visibility_da),
        chsh_s: mean_stat(&col(|r| r.chsh_s), exp.chsh_s),
        unreliable_fits: unreliable,
    };
    Ok(Simulation {
        source,
        first: first.expect("at least one run"),
        rows,
        summary,
    })
}

/// Counts CSV with the output header prepended.
pub fn counts_csv(out: &Output, records: &[CountRecord], metadata: &[(&str, String)]) -> Result<String> {
    let mut body = Vec::new();
    write_counts_csv(records, &mut body)?;
    let head = out.header_text(&metadata.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<Vec<_>>());
    Ok(head + std::str::from_utf8(&body).expect("csv is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimetagEntry {
    pub file: String,
    pub setting: AnalyzerSetting,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimetagManifest {
    pub duration_s: f64,
    pub window_ns: f64,
    pub entries: Vec<TimetagEntry>,
}

pub const TIMETAG_MANIFEST: &str = "timetags/manifest.json";

fn simulate(scenario: &Scenario, out: &Output) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let sim = run_simulation(&model, scenario)?;
    let meta = |block: &str| {
        vec![
            ("block", block.to_string()),
            ("seed", scenario.seed.to_string()),
            ("run", "0".to_string()),
            ("pair_rate_per_s", sim.source.pair_rate_per_s.to_string()),
            ("source_visibility", sim.source.visibility.to_string()),
        ]
    };
    out.write_bytes("fringe_hv.csv", counts_csv(out, &sim.first.fringe_hv, &meta("fringe_hv"))?.as_bytes())?;
    out.write_bytes("fringe_da.csv", counts_csv(out, &sim.first.fringe_da, &meta("fringe_da"))?.as_bytes())?;
    out.write_bytes("chsh.csv", counts_csv(out, &sim.first.chsh, &meta("chsh"))?.as_bytes())?;

    let mut t = Table::new(["run", "visibility_hv", "sigma_visibility_hv", "visibility_da", "sigma_visibility_da", "chsh_s", "sigma_s"]);
    for r in &sim.rows {
        t.push(vec![
            r.run.into(),
            r.visibility_hv.into(),
            r.sigma_visibility_hv.into(),
            r.visibility_da.into(),
            r.sigma_visibility_da.into(),
            r.chsh_s.into(),
            r.sigma_s.into(),
        ]);
    }
    out.write_table("simulate_runs", &t)?;

    if scenario.simulate.timetags {
        let plan = setting_plan(scenario)?;
        let duration = scenario.simulate.timetag_duration_s;
        let mut entries = Vec::new();
        for (k, setting) in plan.chsh.iter().enumerate() {
            let tags = simulate_time_tags(&sim.source, &scenario.detectors, setting, duration, sub_seed(scenario.seed, 1_000_000 + k as u64))?;
            let mut bytes = Vec::new();
            write_time_tags(&tags, &mut bytes)?;
            let file = format!("timetags/chsh_{k}.qpmtt");
            out.write_bytes(&file, &bytes)?;
            entries.push(TimetagEntry {
                file: format!("chsh_{k}.qpmtt"),
                setting: *setting,
                sha256: sha256_hex(&bytes),
            });
        }
        out.write_json(
            TIMETAG_MANIFEST,
            &TimetagManifest {
                duration_s: duration,
                window_ns: scenario.detectors.window_ns,
                entries,
            },
        )?;
    }
    out.write_json("simulate_summary.json", &sim.summary)?;
    Ok(to_value(&sim.summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FringeAnalysis {
    pub source: String,
    pub visibility: f64,
    pub sigma_visibility: f64,
    pub phase_rad: f64,
    pub clamped: bool,
    pub unreliable: bool,
    pub bootstrap: BootstrapSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChshAnalysis {
    pub source: String,
    pub s: f64,
    pub sigma_s: f64,
    pub significance: f64,
    pub correlations: Vec<CorrelationEstimate>,
    pub bootstrap: BootstrapSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    pub fringes: Vec<FringeAnalysis>,
    pub chsh: Vec<ChshAnalysis>,
    /// Values implied by the scenario, for comparison.
    pub expected: Expected,
}

const BOOTSTRAP_RESAMPLES: usize = 200;

fn analyse_fringe(name: &str, records: &[CountRecord], seed: u64) -> Result<FringeAnalysis> {
    let axis = if records.windows(2).any(|w| w[0].setting.theta_s_rad != w[1].setting.theta_s_rad) {
        FringeAxis::Signal
    } else {
        FringeAxis::Idler
    };
    let fit = net_visibility(records, axis)?;
    Ok(FringeAnalysis {
        source: name.to_string(),
        visibility: fit.visibility,
        sigma_visibility: fit.sigma_visibility,
        phase_rad: fit.phase_rad,
        clamped: fit.clamped,
        unreliable: fit.unreliable,
        bootstrap: bootstrap_visibility(records, axis, BOOTSTRAP_RESAMPLES, seed)?,
    })
}

fn analyse_chsh(name: &str, r: ChshResult, records: &[CountRecord], seed: u64) -> Result<ChshAnalysis> {
    Ok(ChshAnalysis {
        source: name.to_string(),
        s: r.s,
        significance: r.significance(),
        sigma_s: r.sigma_s,
        correlations: r.correlations,
        bootstrap: bootstrap_chsh(records, &ChshAngles::standard(), 0.0, BOOTSTRAP_RESAMPLES, seed)?,
    })
}

fn read_counts_file(path: &Path) -> Result<Vec<CountRecord>> {
    let text = read_to_string(path)?;
    read_counts_csv(text.as_bytes()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn analyse_counts(name: &str, records: &[CountRecord], seed: u64, analysis: &mut Analysis) -> Result<()> {
    let phi = records.first().map(|r| r.setting.phi_sbc_rad).unwrap_or(0.0);
    match chsh(records, &ChshAngles::standard(), phi) {
        Ok(r) if records.len() == 4 => analysis.chsh.push(analyse_chsh(name, r, records, seed)?),
        _ => analysis.fringes.push(analyse_fringe(name, records, seed)?),
    }
    Ok(())
}

fn read_manifest_records(path: &Path) -> Result<Vec<CountRecord>> {
    let value: serde_json::Value =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let manifest: TimetagManifest =
        serde_json::from_value(envelope_data(value)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            let p = dir.join(&e.file);
            let bytes = std::fs::read(&p).map_err(|source| CliError::Io { path: p.clone(), source })?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(CliError::Input(format!("{}: checksum does not match the manifest", p.display())));
            }
            let tags = read_time_tags(&bytes[..])?;
            Ok(count_coincidences(&tags, e.setting, manifest.duration_s, manifest.window_ns)?)
        })
        .collect()
}

/// Analysis of counts files, a time-tag manifest, or a directory holding the
/// output of `simulate`.
pub fn analyse_input(scenario: &Scenario, model: &DispersionModel, input: &Path) -> Result<Analysis> {
    let mut analysis = Analysis {
        fringes: Vec::new(),
        chsh: Vec::new(),
        expected: expected(&simulated_source(model, scenario)?)?,
    };
    let seed = |k: u64| sub_seed(scenario.seed, 2_000_000 + k);
    if input.is_dir() {
        let mut found = false;
        for (k, name) in ["fringe_hv.csv", "fringe_da.csv", "chsh.csv"].iter().enumerate() {
            let p = input.join(name);
            if p.is_file() {
                found = true;
                analyse_counts(name, &read_counts_file(&p)?, seed(k as u64), &mut analysis)?;
            }
        }
        let manifest = input.join(TIMETAG_MANIFEST);
        if manifest.is_file() {
            found = true;
            let recs = read_manifest_records(&manifest)?;
            let r = chsh(&recs, &ChshAngles::standard(), 0.0)?;
            analysis.chsh.push(analyse_chsh(TIMETAG_MANIFEST, r, &recs, seed(3))?);
        }
        if !found {
            return Err(CliError::Input(format!("{}: no counts or time-tag files", input.display())));
        }
    } else if input.extension().is_some_and(|e| e == "json") {
        let recs = read_manifest_records(input)?;
        let r = chsh(&recs, &ChshAngles::standard(), 0.0)?;
        analysis.chsh.push(analyse_chsh(&input.display().to_string(), r, &recs, seed(3))?);
    } else {
        let recs = read_counts_file(input)?;
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        analyse_counts(&name, &recs, seed(0), &mut analysis)?;
    }
    Ok(analysis)
}

fn analyze(scenario: &Scenario, out: &Output, input: &Path) -> Result<serde_json::Value> {
    let model = load_model(scenario)?;
    let analysis = analyse_input(scenario, &model, input)?;
    let mut t = Table::new(["source", "quantity", "value", "sigma", "bootstrap_std"]);
    for f in &analysis.fringes {
        t.push(vec![f.source.clone().into(), "visibility".into(), f.visibility.into(), f.sigma_visibility.into(), f.bootstrap.std_dev.into()]);
    }
    for c in &analysis.chsh {
        t.push(vec![c.source.clone().into(), "chsh_s".into(), c.s.into(), c.sigma_s.into(), c.bootstrap.std_dev.into()]);
    }
    out.write_table("analysis_table", &t)?;
    out.write_json("analysis.json", &analysis)?;
    Ok(to_value(&analysis))
}
