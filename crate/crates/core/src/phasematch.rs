//! Quasi-phase-matching: mismatch, tuning curves, operating points, spectra
//! and calibration of the waveguide correction.
//!
//! The type-II down-conversion condition is
//!
//! ```text
//! Δβ = β_p(λ_p) − β_s(λ_s) − β_i(λ_i) − 2π/Λ = 0,   1/λ_p = 1/λ_s + 1/λ_i
//! ```
//!
//! with the pump on the TE (ordinary) mode and signal/idler on orthogonal
//! modes. Spectra use the exact grating amplitude G(Δβ) rather than a sinc
//! approximation, so interlacing sidebands come out of the same formula.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionModel, Polarization, WaveguideCorrection, WAVELENGTH_MAX_UM, WAVELENGTH_MIN_UM};
use crate::error::{ensure_positive, ensure_range, Error, Result};
use crate::grating::{fourier_amplitude, fourier_amplitude_perturbed, DomainPattern};
use crate::units::{um_to_nm, TWO_PI};

/// Polarization of the pump in the type-II process. The ordinary (TE) pump is
/// the one that phase-matches with periods near 9 µm.
pub const PUMP_POLARIZATION: Polarization = Polarization::TE;

/// Target |Δβ| for roots, rad/µm.
pub const ROOT_TOLERANCE: f64 = 1e-9;

/// Samples per spectral peak required above half maximum.
pub const MIN_POINTS_ABOVE_HALF_MAX: usize = 8;

const MAX_ITERATIONS: usize = 200;
const JACOBIAN_STEP: f64 = 1e-4;

/// One down-conversion process: polarizations and grating period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub pump_pol: Polarization,
    pub signal_pol: Polarization,
    pub idler_pol: Polarization,
    pub period_um: f64,
}

impl ProcessSpec {
    /// Type-II process with the standard TE pump.
    pub fn type_ii(signal_pol: Polarization, period_um: f64) -> Self {
        Self {
            pump_pol: PUMP_POLARIZATION,
            signal_pol,
            idler_pol: signal_pol.orthogonal(),
            period_um,
        }
    }

    /// Same process with signal and idler labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            signal_pol: self.idler_pol,
            idler_pol: self.signal_pol,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_pol == self.idler_pol {
            return Err(Error::InvalidParameter {
                param: "idler_pol",
                reason: "type-II process needs orthogonal signal and idler".into(),
            });
        }
        ensure_positive("period_um", self.period_um)
    }

    pub fn grating_vector(&self) -> f64 {
        TWO_PI / self.period_um
    }
}

/// Idler wavelength fixed by energy conservation.
pub fn idler_wavelength(pump_um: f64, signal_um: f64) -> Result<f64> {
    ensure_positive("pump_um", pump_um)?;
    if !(signal_um > pump_um) {
        return Err(Error::InvalidParameter {
            param: "signal_um",
            reason: format!("signal {signal_um} µm must be longer than pump {pump_um} µm"),
        });
    }
    Ok(1.0 / (1.0 / pump_um - 1.0 / signal_um))
}

fn checked_idler(pump_um: f64, signal_um: f64) -> Result<f64> {
    let idler = idler_wavelength(pump_um, signal_um)?;
    ensure_range("idler_wavelength_um", idler, WAVELENGTH_MIN_UM, WAVELENGTH_MAX_UM)?;
    Ok(idler)
}

/// β_p − β_s − β_i, without the grating term.
pub fn mismatch_without_grating(
    model: &DispersionModel,
    spec: &ProcessSpec,
    pump_um: f64,
    signal_um: f64,
    temperature_c: f64,
) -> Result<f64> {
    let idler = checked_idler(pump_um, signal_um)?;
    Ok(model.wavenumber(spec.pump_pol, pump_um, temperature_c)?
        - model.wavenumber(spec.signal_pol, signal_um, temperature_c)?
        - model.wavenumber(spec.idler_pol, idler, temperature_c)?)
}

/// Full mismatch Δβ including the grating vector 2π/Λ, rad/µm.
pub fn mismatch(
    model: &DispersionModel,
    spec: &ProcessSpec,
    pump_um: f64,
    signal_um: f64,
    temperature_c: f64,
) -> Result<f64> {
    Ok(mismatch_without_grating(model, spec, pump_um, signal_um, temperature_c)? - spec.grating_vector())
}

/// Bisection on a bracketing interval until |f| < ROOT_TOLERANCE.
fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < ROOT_TOLERANCE || hi - lo < 1e-15 {
            return mid;
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    mid
}

/// All signal wavelengths in `range` where Δβ = 0, by sign bracketing on
/// `samples` points and bisection. Samples whose idler falls outside the
/// model's range are skipped.
pub fn signal_roots(
    model: &DispersionModel,
    spec: &ProcessSpec,
    pump_um: f64,
    temperature_c: f64,
    range: (f64, f64),
    samples: usize,
) -> Vec<f64> {
    let eval = |s: f64| mismatch(model, spec, pump_um, s, temperature_c).ok();
    let step = (range.1 - range.0) / (samples.max(2) - 1) as f64;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..samples.max(2) {
        let s = range.0 + step * i as f64;
        let Some(v) = eval(s) else {
            prev = None;
            continue;
        };
        if v == 0.0 {
            roots.push(s);
        } else if let Some((ps, pv)) = prev {
            if pv != 0.0 && (pv < 0.0) != (v < 0.0) {
                let root = bisect(|x| eval(x).unwrap_or(f64::NAN), ps, s, pv);
                roots.push(root);
            }
        }
        prev = Some((s, v));
    }
    roots
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub pump_um: f64,
    pub signal_um: f64,
    pub idler_um: f64,
}

/// A continuous locus of phase-matched (λ_p, λ_s, λ_i) for one polarization
/// assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningBranch {
    pub period_um: f64,
    pub signal_pol: Polarization,
    pub idler_pol: Polarization,
    pub points: Vec<TuningPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuningOptions {
    pub pump_samples: usize,
    pub signal_samples: usize,
    pub signal_range_um: (f64, f64),
}

impl Default for TuningOptions {
    fn default() -> Self {
        Self {
            pump_samples: 201,
            signal_samples: 2000,
            signal_range_um: (1.4, 1.7),
        }
    }
}

/// Tuning curve of one grating period: both polarization orderings of the
/// type-II pair, so the TE- and TM-photon loci cross at degeneracy.
pub fn solve_tuning_curve(
    model: &DispersionModel,
    spec: &ProcessSpec,
    pump_range_um: (f64, f64),
    temperature_c: f64,
    options: &TuningOptions,
) -> Result<Vec<TuningBranch>> {
    spec.validate()?;
    ensure_range("pump_min_um", pump_range_um.0, 0.7, 0.85)?;
    ensure_range("pump_max_um", pump_range_um.1, 0.7, 0.85)?;
    if !(pump_range_um.1 > pump_range_um.0) || options.pump_samples < 2 {
        return Err(Error::InvalidParameter {
            param: "pump_range_um",
            reason: "need an increasing range with at least two samples".into(),
        });
    }
    crate::error::ensure_range("temperature_c", temperature_c, 20.0, 250.0)?;
    let pumps = crate::grating::linspace(pump_range_um.0, pump_range_um.1, options.pump_samples);
    let pump_step = pumps[1] - pumps[0];
    let signal_step = (options.signal_range_um.1 - options.signal_range_um.0) / options.signal_samples as f64;
    let jump = 20.0 * pump_step + 5.0 * signal_step;

    let mut branches = Vec::new();
    for ordering in [*spec, spec.swapped()] {
        let roots: Vec<Vec<f64>> = pumps
            .par_iter()
            .map(|&p| {
                signal_roots(
                    model,
                    &ordering,
                    p,
                    temperature_c,
                    options.signal_range_um,
                    options.signal_samples,
                )
            })
            .collect();
        let mut open: Vec<TuningBranch> = Vec::new();
        let mut closed: Vec<TuningBranch> = Vec::new();
        for (&pump, row) in pumps.iter().zip(&roots) {
            let mut taken = vec![false; open.len()];
            let mut next_open = Vec::new();
            for &s in row {
                let point = TuningPoint {
                    pump_um: pump,
                    signal_um: s,
                    idler_um: 1.0 / (1.0 / pump - 1.0 / s),
                };
                let best = open
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .map(|(i, b)| (i, (b.points.last().unwrap().signal_um - s).abs()))
                    .filter(|&(_, d)| d <= jump)
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                match best {
                    Some((i, _)) => {
                        taken[i] = true;
                        let mut b = open[i].clone();
                        b.points.push(point);
                        next_open.push(b);
                    }
                    None => next_open.push(TuningBranch {
                        period_um: ordering.period_um,
                        signal_pol: ordering.signal_pol,
                        idler_pol: ordering.idler_pol,
                        points: vec![point],
                    }),
                }
            }
            for (i, b) in open.into_iter().enumerate() {
                if !taken[i] {
                    closed.push(b);
                }
            }
            open = next_open;
        }
        closed.extend(open);
        closed.sort_by(|a, b| a.points[0].pump_um.partial_cmp(&b.points[0].pump_um).unwrap());
        branches.extend(closed);
    }
    Ok(branches)
}

/// Which scalar is solved for together with the signal wavelength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParameter {
    /// Pump fixed, temperature free.
    Temperature { pump_um: f64 },
    /// Temperature fixed, pump free.
    Pump { temperature_c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessAssignment {
    pub period_um: f64,
    pub signal_pol: Polarization,
    pub idler_pol: Polarization,
}

/// A pump/temperature setting where both periods phase-match the same
/// wavelength pair with opposite polarizations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub pump_um: f64,
    pub temperature_c: f64,
    pub signal_um: f64,
    pub idler_um: f64,
    pub processes: [ProcessAssignment; 2],
    pub residuals: [f64; 2],
}

impl OperatingPoint {
    pub fn process_specs(&self) -> [ProcessSpec; 2] {
        self.processes
            .map(|p| ProcessSpec::type_ii(p.signal_pol, p.period_um))
    }
}

struct PairSystem<'a> {
    model: &'a DispersionModel,
    a: ProcessSpec,
    b: ProcessSpec,
    free: FreeParameter,
}

impl PairSystem<'_> {
    fn pump_temp(&self, v: f64) -> (f64, f64) {
        match self.free {
            FreeParameter::Temperature { pump_um } => (pump_um, v),
            FreeParameter::Pump { temperature_c } => (v, temperature_c),
        }
    }

    fn range(&self) -> (f64, f64, f64) {
        match self.free {
            FreeParameter::Temperature { .. } => (20.0, 250.0, 1.0),
            FreeParameter::Pump { .. } => (0.7, 0.85, 5e-4),
        }
    }

    fn residuals(&self, v: f64, signal: f64) -> Option<[f64; 2]> {
        let (p, t) = self.pump_temp(v);
        Some([
            mismatch(self.model, &self.a, p, signal, t).ok()?,
            mismatch(self.model, &self.b, p, signal, t).ok()?,
        ])
    }

    fn a_roots(&self, v: f64) -> Vec<f64> {
        let (p, t) = self.pump_temp(v);
        signal_roots(self.model, &self.a, p, t, (1.4, 1.7), 600)
    }

    /// Process-B mismatch along the process-A root nearest `near`.
    fn follow(&self, v: f64, near: f64) -> Option<(f64, f64)> {
        let s = self
            .a_roots(v)
            .into_iter()
            .min_by(|x, y| (x - near).abs().partial_cmp(&(y - near).abs()).unwrap())?;
        Some((s, self.residuals(v, s)?[1]))
    }

    fn newton(&self, mut v: f64, mut s: f64, bracket: (f64, f64)) -> Option<(f64, f64, [f64; 2])> {
        let h = JACOBIAN_STEP;
        for _ in 0..MAX_ITERATIONS {
            let r = self.residuals(v, s)?;
            if r[0].abs() < ROOT_TOLERANCE && r[1].abs() < ROOT_TOLERANCE {
                return Some((v, s, r));
            }
            let dv = {
                let up = self.residuals(v + h, s)?;
                let dn = self.residuals(v - h, s)?;
                [(up[0] - dn[0]) / (2.0 * h), (up[1] - dn[1]) / (2.0 * h)]
            };
            let ds = {
                let up = self.residuals(v, s + h)?;
                let dn = self.residuals(v, s - h)?;
                [(up[0] - dn[0]) / (2.0 * h), (up[1] - dn[1]) / (2.0 * h)]
            };
            let det = dv[0] * ds[1] - ds[0] * dv[1];
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            v -= (r[0] * ds[1] - ds[0] * r[1]) / det;
            s -= (dv[0] * r[1] - r[0] * dv[1]) / det;
            if v < bracket.0 || v > bracket.1 {
                return None;
            }
        }
        None
    }

    fn bisection(&self, lo: f64, hi: f64, near: f64) -> Result<(f64, f64, [f64; 2])> {
        let (mut lo, mut hi) = (lo, hi);
        let (mut s, mut f_lo) = self.follow(lo, near).ok_or_else(|| self.failure(lo, near))?;
        for _ in 0..MAX_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            let (sm, fm) = self.follow(mid, s).ok_or_else(|| self.failure(mid, s))?;
            s = sm;
            if fm.abs() < ROOT_TOLERANCE || hi - lo < 1e-13 {
                let r = self.residuals(mid, sm).ok_or_else(|| self.failure(mid, sm))?;
                return Ok((mid, sm, r));
            }
            if (fm < 0.0) == (f_lo < 0.0) {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
            }
        }
        Err(self.failure(0.5 * (lo + hi), s))
    }

    fn failure(&self, v: f64, s: f64) -> Error {
        Error::Solver {
            iterations: MAX_ITERATIONS,
            residuals: self.residuals(v, s).map(|r| r.to_vec()).unwrap_or_default(),
        }
    }

    fn solve(&self) -> Result<Vec<(f64, f64, [f64; 2])>> {
        let (lo, hi, step) = self.range();
        let n = ((hi - lo) / step).round() as usize;
        let samples: Vec<(f64, Vec<(f64, f64)>)> = (0..=n)
            .into_par_iter()
            .map(|i| {
                let v = lo + step * i as f64;
                let pts = self
                    .a_roots(v)
                    .into_iter()
                    .filter_map(|s| Some((s, self.residuals(v, s)?[1])))
                    .collect();
                (v, pts)
            })
            .collect();
        let mut found = Vec::new();
        for w in samples.windows(2) {
            let (v0, ref p0) = w[0];
            let (v1, ref p1) = w[1];
            for &(s0, h0) in p0 {
                let Some(&(s1, h1)) = p1
                    .iter()
                    .min_by(|x, y| (x.0 - s0).abs().partial_cmp(&(y.0 - s0).abs()).unwrap())
                else {
                    continue;
                };
                if (s1 - s0).abs() > 0.02 || (h0 < 0.0) == (h1 < 0.0) {
                    continue;
                }
                let t = h0 / (h0 - h1);
                let guess_v = v0 + t * (v1 - v0);
                let guess_s = s0 + t * (s1 - s0);
                let sol = match self.newton(guess_v, guess_s, (v0, v1)) {
                    Some(sol) => sol,
                    None => self.bisection(v0, v1, s0)?,
                };
                found.push(sol);
            }
        }
        Ok(found)
    }
}

/// All operating points of the bi-periodic grating inside the free
/// parameter's range (20–250 °C or 0.70–0.85 µm), ordered by that parameter.
///
/// The Λ1 process is assigned either polarization at the signal wavelength
/// and the Λ2 process the opposite one; only solutions with the signal on the
/// short-wavelength side are kept, so each physical point appears once.
pub fn find_operating_points(
    model: &DispersionModel,
    period1_um: f64,
    period2_um: f64,
    free: FreeParameter,
) -> Result<Vec<OperatingPoint>> {
    ensure_positive("period1_um", period1_um)?;
    ensure_positive("period2_um", period2_um)?;
    match free {
        FreeParameter::Temperature { pump_um } => ensure_range("pump_um", pump_um, WAVELENGTH_MIN_UM, WAVELENGTH_MAX_UM)?,
        FreeParameter::Pump { temperature_c } => ensure_range("temperature_c", temperature_c, 20.0, 250.0)?,
    }
    let mut points = Vec::new();
    for signal_pol in [Polarization::TM, Polarization::TE] {
        let system = PairSystem {
            model,
            a: ProcessSpec::type_ii(signal_pol, period1_um),
            b: ProcessSpec::type_ii(signal_pol.orthogonal(), period2_um),
            free,
        };
        for (v, s, r) in system.solve()? {
            let (pump, t) = system.pump_temp(v);
            let idler = idler_wavelength(pump, s)?;
            if s < idler {
                points.push(OperatingPoint {
                    pump_um: pump,
                    temperature_c: t,
                    signal_um: s,
                    idler_um: idler,
                    processes: [system.a, system.b].map(|p| ProcessAssignment {
                        period_um: p.period_um,
                        signal_pol: p.signal_pol,
                        idler_pol: p.idler_pol,
                    }),
                    residuals: r,
                });
            }
        }
    }
    points.sort_by(|a, b| {
        let key = |p: &OperatingPoint| match free {
            FreeParameter::Temperature { .. } => p.temperature_c,
            FreeParameter::Pump { .. } => p.pump_um,
        };
        key(a).partial_cmp(&key(b)).unwrap()
    });
    Ok(points)
}

/// The first operating point (lowest temperature or pump wavelength).
pub fn find_operating_point(
    model: &DispersionModel,
    period1_um: f64,
    period2_um: f64,
    free: FreeParameter,
) -> Result<OperatingPoint> {
    find_operating_points(model, period1_um, period2_um, free)?
        .into_iter()
        .next()
        .ok_or(Error::Solver {
            iterations: 0,
            residuals: Vec::new(),
        })
}

/// Complex spectral amplitude of one process versus signal wavelength.
///
/// The phase is referenced to the grating midpoint, i.e. the frame in which
/// the TE/TM group delay has been compensated symmetrically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralAmplitude {
    pub pump_um: f64,
    pub temperature_c: f64,
    pub signal_pol: Polarization,
    pub idler_pol: Polarization,
    pub signal_um: Vec<f64>,
    pub amplitude: Vec<Complex64>,
    pub fwhm_nm: f64,
}

impl SpectralAmplitude {
    pub fn intensity(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn idler_um(&self) -> Vec<f64> {
        self.signal_um
            .iter()
            .map(|&s| 1.0 / (1.0 / self.pump_um - 1.0 / s))
            .collect()
    }

    pub fn peak_signal_um(&self) -> f64 {
        let i = argmax(&self.intensity());
        self.signal_um[i]
    }

    /// Copy with new amplitudes on the same grid (FWHM recomputed when
    /// resolvable, otherwise kept).
    pub fn with_amplitude(&self, amplitude: Vec<Complex64>) -> Self {
        let mut out = Self {
            amplitude,
            ..self.clone()
        };
        let intensity = out.intensity();
        if let Ok(w) = fwhm(&out.signal_um, &intensity) {
            out.fwhm_nm = um_to_nm(w);
        }
        out
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Full width at half maximum of the peak containing the global maximum,
/// with linear interpolation of the crossings.
pub fn fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Shape("fwhm needs matching grids of at least 3 points".into()));
    }
    let imax = argmax(y);
    let half = 0.5 * y[imax];
    let mut i = imax;
    while i > 0 && y[i - 1] >= half {
        i -= 1;
    }
    let mut j = imax;
    while j + 1 < y.len() && y[j + 1] >= half {
        j += 1;
    }
    let above = j - i + 1;
    if above < MIN_POINTS_ABOVE_HALF_MAX {
        return Err(Error::Resolution {
            points: above,
            required: MIN_POINTS_ABOVE_HALF_MAX,
        });
    }
    if i == 0 || j + 1 == y.len() {
        return Err(Error::Input("half-maximum crossing lies outside the sampled grid".into()));
    }
    let left = x[i - 1] + (half - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1]);
    let right = x[j] + (half - y[j]) / (y[j + 1] - y[j]) * (x[j + 1] - x[j]);
    Ok(right - left)
}

/// Spectrum of the process with `signal_pol` at the signal wavelength,
/// optionally with a z-dependent phase error on the grating.
pub fn process_spectrum(
    model: &DispersionModel,
    pattern: &DomainPattern,
    signal_pol: Polarization,
    pump_um: f64,
    temperature_c: f64,
    signal_grid_um: &[f64],
    perturbation: Option<&(dyn Fn(f64) -> f64 + Sync)>,
) -> Result<SpectralAmplitude> {
    let spec = ProcessSpec::type_ii(signal_pol, f64::INFINITY);
    let half_length = 0.5 * pattern.length_um();
    let raw: Vec<Complex64> = signal_grid_um
        .par_iter()
        .map(|&s| {
            let dk = mismatch_without_grating(model, &spec, pump_um, s, temperature_c)?;
            let g = match perturbation {
                Some(phase) => fourier_amplitude_perturbed(pattern, dk, phase),
                None => fourier_amplitude(pattern, dk),
            };
            Ok(g * Complex64::from_polar(1.0, dk * half_length))
        })
        .collect::<Result<_>>()?;
    let peak = raw.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Input("spectrum vanishes on the whole grid".into()));
    }
    let amplitude: Vec<Complex64> = raw.into_iter().map(|a| a / peak).collect();
    let intensity: Vec<f64> = amplitude.iter().map(|a| a.norm_sqr()).collect();
    let width = fwhm(signal_grid_um, &intensity)?;
    Ok(SpectralAmplitude {
        pump_um,
        temperature_c,
        signal_pol,
        idler_pol: signal_pol.orthogonal(),
        signal_um: signal_grid_um.to_vec(),
        amplitude,
        fwhm_nm: um_to_nm(width),
    })
}

/// Both polarization assignments of the down-converted pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdcSpectrum {
    pub signal_te: SpectralAmplitude,
    pub signal_tm: SpectralAmplitude,
}

impl PdcSpectrum {
    pub fn process(&self, signal_pol: Polarization) -> &SpectralAmplitude {
        match signal_pol {
            Polarization::TE => &self.signal_te,
            Polarization::TM => &self.signal_tm,
        }
    }
}

/// PDC spectra of a grating at fixed pump wavelength and temperature.
pub fn pdc_spectrum(
    model: &DispersionModel,
    pattern: &DomainPattern,
    pump_um: f64,
    temperature_c: f64,
    signal_grid_um: &[f64],
) -> Result<PdcSpectrum> {
    Ok(PdcSpectrum {
        signal_te: process_spectrum(model, pattern, Polarization::TE, pump_um, temperature_c, signal_grid_um, None)?,
        signal_tm: process_spectrum(model, pattern, Polarization::TM, pump_um, temperature_c, signal_grid_um, None)?,
    })
}

/// Type-II second-harmonic mismatch β_TE(λ/2) − β_TE(λ) − β_TM(λ).
pub fn sh_mismatch(model: &DispersionModel, fundamental_um: f64, temperature_c: f64) -> Result<f64> {
    Ok(model.wavenumber(PUMP_POLARIZATION, 0.5 * fundamental_um, temperature_c)?
        - model.wavenumber(Polarization::TE, fundamental_um, temperature_c)?
        - model.wavenumber(Polarization::TM, fundamental_um, temperature_c)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShSpectrum {
    pub temperature_c: f64,
    pub fundamental_um: Vec<f64>,
    pub mismatch: Vec<f64>,
    /// |G(Δβ_SH)|² normalized to its maximum on the grid.
    pub intensity: Vec<f64>,
}

impl ShSpectrum {
    pub fn peaks(&self, rel_threshold: f64) -> Vec<crate::grating::Peak> {
        crate::grating::find_peaks(&self.fundamental_um, &self.intensity, rel_threshold)
    }
}

/// SH intensity versus fundamental wavelength (grid inside [1.5, 1.6] µm).
pub fn sh_spectrum(
    model: &DispersionModel,
    pattern: &DomainPattern,
    fundamental_grid_um: &[f64],
    temperature_c: f64,
) -> Result<ShSpectrum> {
    for &l in fundamental_grid_um {
        ensure_range("fundamental_um", l, 1.5, 1.6)?;
    }
    let mismatch: Vec<f64> = fundamental_grid_um
        .iter()
        .map(|&l| sh_mismatch(model, l, temperature_c))
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = mismatch
        .par_iter()
        .map(|&dk| fourier_amplitude(pattern, dk).norm_sqr())
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Input("SH spectrum vanishes on the whole grid".into()));
    }
    Ok(ShSpectrum {
        temperature_c,
        fundamental_um: fundamental_grid_um.to_vec(),
        mismatch,
        intensity: raw.into_iter().map(|v| v / max).collect(),
    })
}

/// One phase-matching condition the calibrated model must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConstraint {
    pub pump_um: f64,
    pub temperature_c: f64,
    pub signal_um: f64,
    pub signal_pol: Polarization,
    pub period_um: f64,
}

impl CalibrationConstraint {
    pub fn process(&self) -> ProcessSpec {
        ProcessSpec::type_ii(self.signal_pol, self.period_um)
    }
}

/// Tolerance on the RMS constraint residual after calibration, rad/µm.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

pub fn constraint_residuals(model: &DispersionModel, constraints: &[CalibrationConstraint]) -> Result<Vec<f64>> {
    constraints
        .iter()
        .map(|c| mismatch(model, &c.process(), c.pump_um, c.signal_um, c.temperature_c))
        .collect()
}

fn model_from_params(base: &DispersionModel, p: &DVector<f64>) -> DispersionModel {
    base.with_corrections(WaveguideCorrection::new(p[0], p[1]), WaveguideCorrection::new(p[2], p[3]))
}

/// ∂Δβ/∂(a_TE, b_TE, a_TM, b_TM) for one constraint. Δβ is linear in the
/// correction parameters.
fn jacobian_row(model: &DispersionModel, c: &CalibrationConstraint) -> Result<[f64; 4]> {
    let spec = c.process();
    let idler = checked_idler(c.pump_um, c.signal_um)?;
    let lref = model.reference_wavelength_um();
    let mut row = [0.0; 4];
    for (pol, lambda, sign) in [
        (spec.pump_pol, c.pump_um, 1.0),
        (spec.signal_pol, c.signal_um, -1.0),
        (spec.idler_pol, idler, -1.0),
    ] {
        let base = if pol == Polarization::TE { 0 } else { 2 };
        row[base] += sign * TWO_PI / lambda;
        row[base + 1] += sign * TWO_PI * (lambda - lref) / lambda;
    }
    Ok(row)
}

/// Fits the affine waveguide corrections of both polarizations so that every
/// constraint is phase-matched (least squares on Σ Δβ²).
///
/// With fewer independent constraints than parameters the minimum-norm
/// change from the base corrections is taken.
pub fn calibrate_model(base: &DispersionModel, constraints: &[CalibrationConstraint]) -> Result<DispersionModel> {
    if constraints.is_empty() {
        return Ok(base.clone());
    }
    let te = base.correction(Polarization::TE);
    let tm = base.correction(Polarization::TM);
    let mut params = DVector::from_vec(vec![te.offset, te.slope_per_um, tm.offset, tm.slope_per_um]);
    let mut jac = DMatrix::zeros(constraints.len(), 4);
    for (i, c) in constraints.iter().enumerate() {
        let row = jacobian_row(base, c)?;
        for (j, v) in row.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    let pinv = jac
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Input(format!("calibration Jacobian: {e}")))?;
    let mut model = model_from_params(base, &params);
    for _ in 0..10 {
        let r = DVector::from_vec(constraint_residuals(&model, constraints)?);
        if r.amax() < 1e-13 {
            break;
        }
        params -= &pinv * r;
        model = model_from_params(base, &params);
    }
    let residuals = constraint_residuals(&model, constraints)?;
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    if !(rms < CALIBRATION_TOLERANCE) {
        return Err(Error::Calibration { rms, residuals });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use crate::grating::{build_interlaced, build_uniform, linspace};
    use approx::assert_relative_eq;

    fn calibrated() -> DispersionModel {
        device::calibrated_model().unwrap()
    }

    #[test]
    fn grating_term_enters_linearly() {
        let m = DispersionModel::lithium_niobate();
        let spec = ProcessSpec::type_ii(Polarization::TM, 9.30);
        let with = mismatch(&m, &spec, 0.78, 1.55, 150.0).unwrap();
        let without = mismatch_without_grating(&m, &spec, 0.78, 1.55, 150.0).unwrap();
        assert_relative_eq!(without - with, TWO_PI / 9.30, epsilon = 1e-12);
    }

    #[test]
    fn idler_out_of_range_is_an_error() {
        let m = DispersionModel::lithium_niobate();
        let spec = ProcessSpec::type_ii(Polarization::TM, 9.30);
        match mismatch(&m, &spec, 0.85, 1.4, 150.0) {
            Err(Error::OutOfRange { param, .. }) => assert_eq!(param, "idler_wavelength_um"),
            other => panic!("{other:?}"),
        }
        assert!(mismatch(&m, &spec, 0.78, 0.7, 150.0).is_err());
    }

    #[test]
    fn type_ii_requires_orthogonal_pair() {
        let mut spec = ProcessSpec::type_ii(Polarization::TE, 9.3);
        assert!(spec.validate().is_ok());
        spec.idler_pol = Polarization::TE;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn calibration_hits_the_operating_constraints() {
        let m = calibrated();
        let r = constraint_residuals(&m, &device::operating_constraints()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9), "{r:?}");
    }

    #[test]
    fn calibration_without_constraints_is_identity() {
        let base = DispersionModel::lithium_niobate();
        assert_eq!(calibrate_model(&base, &[]).unwrap(), base);
    }

    #[test]
    fn calibration_is_a_fixed_point() {
        let m = calibrated();
        let again = calibrate_model(&m, &device::operating_constraints()).unwrap();
        let r = constraint_residuals(&again, &device::operating_constraints()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9));
        for pol in [Polarization::TE, Polarization::TM] {
            assert!((again.correction(pol).offset - m.correction(pol).offset).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_constraints_report_residuals() {
        let base = DispersionModel::lithium_niobate();
        let c = device::operating_constraints()[0];
        let mut d = c;
        d.period_um = 9.0;
        match calibrate_model(&base, &[c, d]) {
            Err(Error::Calibration { residuals, .. }) => assert_eq!(residuals.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_period_tuning_curve_is_a_cross() {
        let m = calibrated();
        let spec = ProcessSpec::type_ii(Polarization::TM, 9.30);
        let branches = solve_tuning_curve(&m, &spec, (0.77, 0.79), device::OPERATING_TEMPERATURE_C, &TuningOptions::default()).unwrap();
        assert_eq!(branches.len(), 2);
        // TM-photon wavelength minus TE-photon wavelength changes sign along λp
        let tm = &branches[0];
        let diff: Vec<f64> = tm.points.iter().map(|p| p.signal_um - p.idler_um).collect();
        assert!(diff.first().unwrap().signum() != diff.last().unwrap().signum());
        for b in &branches {
            for p in &b.points {
                assert_relative_eq!(1.0 / p.pump_um, 1.0 / p.signal_um + 1.0 / p.idler_um, max_relative = 1e-12);
                let r = mismatch(&m, &ProcessSpec::type_ii(b.signal_pol, b.period_um), p.pump_um, p.signal_um, device::OPERATING_TEMPERATURE_C).unwrap();
                assert!(r.abs() < ROOT_TOLERANCE);
            }
            for w in b.points.windows(2) {
                assert!((w[1].signal_um - w[0].signal_um).abs() < 0.01);
            }
        }
        // near degeneracy λ_s ≈ λ_i ≈ 2λ_p
        let crossing = tm
            .points
            .iter()
            .min_by(|a, b| (a.signal_um - a.idler_um).abs().partial_cmp(&(b.signal_um - b.idler_um).abs()).unwrap())
            .unwrap();
        assert!((crossing.signal_um - 2.0 * crossing.pump_um).abs() < 0.005);
    }

    #[test]
    fn operating_point_of_calibrated_device() {
        let m = calibrated();
        let op = find_operating_point(&m, 9.30, 9.37, FreeParameter::Temperature { pump_um: 0.78 }).unwrap();
        assert!((op.temperature_c - 156.4).abs() < 0.5, "{op:?}");
        assert!((op.signal_um - 1.551).abs() < 0.002);
        assert!((op.idler_um - 1.571).abs() < 0.002);
        assert!(op.residuals.iter().all(|r| r.abs() < ROOT_TOLERANCE));
        assert_eq!(op.processes[0].signal_pol, Polarization::TM);
        assert_eq!(op.processes[1].signal_pol, Polarization::TE);
        assert_relative_eq!(1.0 / op.pump_um, 1.0 / op.signal_um + 1.0 / op.idler_um, max_relative = 1e-12);

        let swapped = find_operating_point(&m, 9.37, 9.30, FreeParameter::Temperature { pump_um: 0.78 }).unwrap();
        assert!((swapped.temperature_c - op.temperature_c).abs() < 1e-6);
        assert_eq!(swapped.processes[0].signal_pol, Polarization::TE);
        assert_eq!(swapped.processes[0].period_um, 9.37);

        let by_pump = find_operating_point(&m, 9.30, 9.37, FreeParameter::Pump { temperature_c: op.temperature_c }).unwrap();
        assert!((by_pump.pump_um - 0.78).abs() < 1e-6, "{by_pump:?}");
    }

    #[test]
    fn warmer_device_separates_the_peaks() {
        let m = calibrated();
        let t = device::SEPARATED_TEMPERATURE_C;
        let grid = (1.53, 1.57);
        let a = signal_roots(&m, &ProcessSpec::type_ii(Polarization::TM, 9.30), 0.78, t, grid, 2000);
        let b = signal_roots(&m, &ProcessSpec::type_ii(Polarization::TE, 9.37), 0.78, t, grid, 2000);
        assert_eq!((a.len(), b.len()), (1, 1));
        // separated by several bandwidths
        assert!((a[0] - b[0]).abs() > 5.0 * 0.6e-3, "{a:?} {b:?}");
    }

    #[test]
    fn uniform_spectrum_is_sinc_squared() {
        let m = calibrated();
        let periods = 5376;
        let length_mm = periods as f64 * 9.30 / 1e3;
        let p = build_uniform(9.30, length_mm, 0.5).unwrap();
        let op_signal = device::operating_constraints()[0].signal_um;
        let grid = linspace(op_signal - 0.0015, op_signal + 0.0015, 1201);
        let s = process_spectrum(&m, &p, Polarization::TM, 0.78, 156.4, &grid, None).unwrap();
        let spec = ProcessSpec::type_ii(Polarization::TM, f64::INFINITY);
        let oracle: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let dk = mismatch_without_grating(&m, &spec, 0.78, l, 156.4).unwrap();
                qpm_oracle::uniform_grating_amplitude(9.30, 0.5, periods, dk).norm_sqr()
            })
            .collect();
        let omax = oracle.iter().cloned().fold(0.0, f64::max);
        for (a, o) in s.intensity().iter().zip(&oracle) {
            assert!((a - o / omax).abs() < 1e-6);
        }
        // half-power points at ΔβL/2 = ±1.392
        let dks: Vec<f64> = grid
            .iter()
            .map(|&l| mismatch_without_grating(&m, &spec, 0.78, l, 156.4).unwrap())
            .collect();
        let w = fwhm(&dks, &s.intensity()).unwrap().abs();
        assert_relative_eq!(w * p.length_um() / 4.0, 1.39156, max_relative = 2e-3);
    }

    #[test]
    fn fwhm_scales_inversely_with_length() {
        let m = calibrated();
        let c = device::operating_constraints()[0];
        let mut widths = Vec::new();
        for l in [10.0, 25.0, 50.0] {
            let p = build_uniform(9.30, l, 0.5).unwrap();
            let half = 0.0012 * 50.0 / l;
            let grid = linspace(c.signal_um - half, c.signal_um + half, 801);
            let s = process_spectrum(&m, &p, Polarization::TM, 0.78, 156.4, &grid, None).unwrap();
            widths.push(s.fwhm_nm * l);
        }
        for w in &widths {
            assert!((w / widths[2] - 1.0).abs() < 0.02, "{widths:?}");
        }
    }

    #[test]
    fn coarse_grid_is_a_resolution_error() {
        let m = calibrated();
        let p = build_uniform(9.30, 50.0, 0.5).unwrap();
        let c = device::operating_constraints()[0];
        let grid = linspace(c.signal_um - 0.01, c.signal_um + 0.01, 101);
        assert!(matches!(
            process_spectrum(&m, &p, Polarization::TM, 0.78, 156.4, &grid, None),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn interlaced_device_spectra_peak_at_the_operating_point() {
        let m = calibrated();
        let g = build_interlaced(&device::interlaced_spec()).unwrap();
        let c = device::operating_constraints()[0];
        let grid = linspace(c.signal_um - 0.002, c.signal_um + 0.002, 801);
        let s = pdc_spectrum(&m, &g.pattern, 0.78, 156.4, &grid).unwrap();
        let step = grid[1] - grid[0];
        for pol in [Polarization::TE, Polarization::TM] {
            let a = s.process(pol);
            assert!((a.peak_signal_um() - c.signal_um).abs() <= step, "{pol}");
            assert!(a.fwhm_nm > 0.3 && a.fwhm_nm < 0.7, "{}", a.fwhm_nm);
        }
    }

    #[test]
    fn sh_peaks_follow_the_grating_spectrum() {
        let m = calibrated();
        let g = build_uniform(9.30, 50.0, 0.5).unwrap();
        let grid = linspace(1.5, 1.6, 20001);
        let sh = sh_spectrum(&m, &g, &grid, 156.4).unwrap();
        let peaks = sh.peaks(0.5);
        assert_eq!(peaks.len(), 1);
        let k = sh.mismatch[peaks[0].index];
        assert!((k - TWO_PI / 9.30).abs() < 2e-4);
        assert!(sh_spectrum(&m, &g, &[1.45], 156.4).is_err());
    }
}
