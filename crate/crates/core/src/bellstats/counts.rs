use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use super::{AnalyzerSetting, ChshAngles, CHSH_SIGNS, PAIRING_PARITY};
use crate::error::{ensure_positive, Error, Result};

/// Counts recorded at one analyzer setting.
///
/// Coincidences are ordered [(+,+), (+,−), (−,+), (−,−)] (signal output,
/// idler output); singles are [+, −] per arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting: AnalyzerSetting,
    pub coincidences: [u64; 4],
    pub singles_signal: [u64; 2],
    pub singles_idler: [u64; 2],
    pub duration_s: f64,
    pub window_ns: f64,
}

/// Flat CSV row of a [`CountRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountRow {
    theta_s_rad: f64,
    theta_i_rad: f64,
    phi_sbc_rad: f64,
    c_pp: u64,
    c_pm: u64,
    c_mp: u64,
    c_mm: u64,
    singles_sp: u64,
    singles_sm: u64,
    singles_ip: u64,
    singles_im: u64,
    duration_s: f64,
    window_ns: f64,
}

impl CountRecord {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("duration_s", self.duration_s)?;
        ensure_positive("window_ns", self.window_ns)
    }

    /// Expected accidental counts per pairing from the singles product.
    pub fn accidental_counts(&self) -> [f64; 4] {
        let t = self.duration_s;
        let w = self.window_ns * 1e-9;
        let mut out = [0.0; 4];
        for j in 0..2 {
            for k in 0..2 {
                out[2 * j + k] = self.singles_signal[j] as f64 * self.singles_idler[k] as f64 * w / t;
            }
        }
        out
    }

    /// Accidental-subtracted coincidences; negative values are clamped to 0
    /// and reported by the flag.
    pub fn net_coincidences(&self) -> ([f64; 4], bool) {
        let acc = self.accidental_counts();
        let mut clamped = false;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let v = self.coincidences[i] as f64 - acc[i];
            if v < 0.0 {
                clamped = true;
            }
            out[i] = v.max(0.0);
        }
        (out, clamped)
    }

    fn to_row(self) -> CountRow {
        CountRow {
            theta_s_rad: self.setting.theta_s_rad,
            theta_i_rad: self.setting.theta_i_rad,
            phi_sbc_rad: self.setting.phi_sbc_rad,
            c_pp: self.coincidences[0],
            c_pm: self.coincidences[1],
            c_mp: self.coincidences[2],
            c_mm: self.coincidences[3],
            singles_sp: self.singles_signal[0],
            singles_sm: self.singles_signal[1],
            singles_ip: self.singles_idler[0],
            singles_im: self.singles_idler[1],
            duration_s: self.duration_s,
            window_ns: self.window_ns,
        }
    }

    fn from_row(r: CountRow) -> Result<Self> {
        let rec = Self {
            setting: AnalyzerSetting::new(r.theta_s_rad, r.theta_i_rad, r.phi_sbc_rad)?,
            coincidences: [r.c_pp, r.c_pm, r.c_mp, r.c_mm],
            singles_signal: [r.singles_sp, r.singles_sm],
            singles_idler: [r.singles_ip, r.singles_im],
            duration_s: r.duration_s,
            window_ns: r.window_ns,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn write_counts_csv<W: Write>(records: &[CountRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r.to_row())?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads rows; lines starting with `#` are metadata and skipped.
pub fn read_counts_csv<R: Read>(r: R) -> Result<Vec<CountRecord>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize::<CountRow>()
        .map(|row| CountRecord::from_row(row?))
        .collect()
}

/// Which plate is rotated across a fringe scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FringeAxis {
    Signal,
    Idler,
}

/// Least-squares fit of y(θ) = c₀ + c₁·cos4θ + c₂·sin4θ, equivalently
/// A·[1 − V·cos(4θ + θ₀)] with A = c₀ and V = √(c₁² + c₂²)/c₀.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub sigma_visibility: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub coefficients: [f64; 3],
    pub residuals: Vec<f64>,
    /// Some net count was negative before clamping.
    pub clamped: bool,
    /// σ_V above [`UNRELIABLE_SIGMA`] or no positive mean level.
    pub unreliable: bool,
}

pub const UNRELIABLE_SIGMA: f64 = 0.1;

/// Weighted fit of a fringe sampled at plate angles `theta_rad` with values
/// `y` and variances `variance` (zero variances count as one).
pub fn fit_fringe(theta_rad: &[f64], y: &[f64], variance: &[f64]) -> Result<FringeFit> {
    if theta_rad.len() != y.len() || y.len() != variance.len() {
        return Err(Error::Shape("fringe arrays must have equal length".into()));
    }
    if y.len() < 4 {
        return Err(Error::Fit {
            reason: format!("need at least 4 settings, got {}", y.len()),
            residuals: Vec::new(),
        });
    }
    let basis = |t: f64| Vector3::new(1.0, (4.0 * t).cos(), (4.0 * t).sin());
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for ((&t, &v), &var) in theta_rad.iter().zip(y).zip(variance) {
        let w = if var > 0.0 { 1.0 / var } else { 1.0 };
        let f = basis(t);
        normal += w * f * f.transpose();
        rhs += w * v * f;
    }
    let residuals_for = |c: &Vector3<f64>| -> Vec<f64> { theta_rad.iter().zip(y).map(|(&t, &v)| v - basis(t).dot(c)).collect() };
    let scale = normal.abs().max();
    let cov = match normal.try_inverse() {
        Some(inv) if normal.determinant().abs() > 1e-12 * scale.powi(3) => inv,
        _ => {
            return Err(Error::Fit {
                reason: "settings do not span a fringe".into(),
                residuals: residuals_for(&Vector3::zeros()),
            })
        }
    };
    let c = cov * rhs;
    let r = c[1].hypot(c[2]);
    let v = r / c[0];
    let grad = if r > 0.0 {
        Vector3::new(-v / c[0], c[1] / (r * c[0]), c[2] / (r * c[0]))
    } else {
        Vector3::new(0.0, 1.0 / c[0], 0.0)
    };
    let sigma = (grad.transpose() * cov * grad)[0].max(0.0).sqrt();
    let unreliable = !(c[0] > 0.0) || !sigma.is_finite() || sigma > UNRELIABLE_SIGMA;
    // c₁ = −A·V·cos θ₀, c₂ = A·V·sin θ₀
    let phase = c[2].atan2(-c[1]);
    Ok(FringeFit {
        visibility: v,
        sigma_visibility: sigma,
        amplitude: c[0],
        phase_rad: phase,
        coefficients: [c[0], c[1], c[2]],
        residuals: residuals_for(&c),
        clamped: false,
        unreliable,
    })
}

struct FringeSamples {
    theta: Vec<f64>,
    y: Vec<f64>,
    /// Accidental counts subtracted at each setting.
    accidentals: Vec<f64>,
    duration: Vec<f64>,
    clamped: bool,
}

fn fringe_samples(records: &[CountRecord], axis: FringeAxis) -> Result<FringeSamples> {
    let mut s = FringeSamples {
        theta: Vec::with_capacity(records.len()),
        y: Vec::with_capacity(records.len()),
        accidentals: Vec::with_capacity(records.len()),
        duration: Vec::with_capacity(records.len()),
        clamped: false,
    };
    for r in records {
        r.validate()?;
        let (net, c) = r.net_coincidences();
        s.clamped |= c;
        s.theta.push(match axis {
            FringeAxis::Signal => r.setting.theta_s_rad,
            FringeAxis::Idler => r.setting.theta_i_rad,
        });
        s.y.push(net[0] / r.duration_s);
        s.accidentals.push((r.coincidences[0] as f64 - net[0]).max(0.0));
        s.duration.push(r.duration_s);
    }
    Ok(s)
}

/// Net visibility of the (+,+) fringe over a plate scan, with accidentals
/// subtracted per setting. Weights come from the fitted rate rather than the
/// observed counts; observed-count weights favour downward fluctuations and
/// bias V upward when the minima are shallow in counts.
pub fn net_visibility(records: &[CountRecord], axis: FringeAxis) -> Result<FringeFit> {
    let s = fringe_samples(records, axis)?;
    let variance = |expected: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (0..s.y.len())
            .map(|i| (expected(i) + s.accidentals[i]).max(1.0) / (s.duration[i] * s.duration[i]))
            .collect()
    };
    let mut fit = fit_fringe(&s.theta, &s.y, &variance(&|i| (s.y[i] * s.duration[i]).max(0.0)))?;
    for _ in 0..2 {
        let model: Vec<f64> = s.y.iter().zip(&fit.residuals).map(|(y, r)| y - r).collect();
        fit = fit_fringe(&s.theta, &s.y, &variance(&|i| (model[i] * s.duration[i]).max(0.0)))?;
    }
    fit.clamped = s.clamped;
    Ok(fit)
}

fn resample(rng: &mut ChaCha8Rng, r: &CountRecord) -> CountRecord {
    let mut out = *r;
    for c in out.coincidences.iter_mut().chain(&mut out.singles_signal).chain(&mut out.singles_idler) {
        *c = super::simulate::poisson(rng, *c as f64);
    }
    out
}

/// Mean and standard deviation of a statistic over parametric (Poisson)
/// resamples of every count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub resamples: usize,
}

fn summarize(values: &[f64]) -> BootstrapSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    BootstrapSummary {
        mean,
        std_dev: var.sqrt(),
        resamples: values.len(),
    }
}

pub fn bootstrap_visibility(records: &[CountRecord], axis: FringeAxis, resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sample: Vec<CountRecord> = records.iter().map(|r| resample(&mut rng, r)).collect();
        values.push(net_visibility(&sample, axis)?.visibility);
    }
    Ok(summarize(&values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub a_rad: f64,
    pub b_rad: f64,
    pub e: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s: f64,
    pub sigma_s: f64,
    pub correlations: Vec<CorrelationEstimate>,
}

impl ChshResult {
    pub fn significance(&self) -> f64 {
        super::violation_significance(self.s, self.sigma_s)
    }
}

/// E and its first-order Poisson σ from one record's net coincidences.
pub fn correlation_from_counts(r: &CountRecord) -> Result<(f64, f64)> {
    r.validate()?;
    let (net, _) = r.net_coincidences();
    let total: f64 = net.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Input("no net coincidences at a CHSH setting".into()));
    }
    let e = net.iter().zip(PAIRING_PARITY).map(|(n, p)| n * p).sum::<f64>() / total;
    // ∂E/∂N_jk = (parity − E)/N, Var(N_jk) ≈ raw count
    let var: f64 = r
        .coincidences
        .iter()
        .zip(PAIRING_PARITY)
        .map(|(&c, p)| ((p - e) / total).powi(2) * c as f64)
        .sum();
    Ok((e, var.sqrt()))
}

fn find_setting<'a>(records: &'a [CountRecord], target: &AnalyzerSetting) -> Result<&'a CountRecord> {
    records
        .iter()
        .find(|r| r.setting.matches(target))
        .ok_or_else(|| {
            Error::Input(format!(
                "missing CHSH setting θ_s={:.6} rad, θ_i={:.6} rad",
                target.theta_s_rad, target.theta_i_rad
            ))
        })
}

/// S = E(a₁b₁) + E(a₁b₂) + E(a₂b₁) − E(a₂b₂) from net counts at the four
/// setting pairs of `angles`.
pub fn chsh(records: &[CountRecord], angles: &ChshAngles, phi_sbc_rad: f64) -> Result<ChshResult> {
    let settings = angles.analyzer_settings(phi_sbc_rad)?;
    let mut s = 0.0;
    let mut var = 0.0;
    let mut correlations = Vec::with_capacity(4);
    for ((setting, sign), (a, b)) in settings.iter().zip(CHSH_SIGNS).zip(angles.pairs()) {
        let (e, sigma) = correlation_from_counts(find_setting(records, setting)?)?;
        s += sign * e;
        var += sigma * sigma;
        correlations.push(CorrelationEstimate {
            a_rad: a,
            b_rad: b,
            e,
            sigma,
        });
    }
    Ok(ChshResult {
        s,
        sigma_s: var.sqrt(),
        correlations,
    })
}

pub fn bootstrap_chsh(records: &[CountRecord], angles: &ChshAngles, phi_sbc_rad: f64, resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sample: Vec<CountRecord> = records.iter().map(|r| resample(&mut rng, r)).collect();
        values.push(chsh(&sample, angles, phi_sbc_rad)?.s);
    }
    Ok(summarize(&values))
}
