//! Ferroelectric domain patterns and their spatial Fourier spectra.
//!
//! A [`DomainPattern`] is the sign function g(z) ∈ {±1} of the nonlinear
//! coefficient along the waveguide. Its normalized Fourier amplitude
//!
//! ```text
//! G(K) = (1/L) ∫₀^L g(z) e^{-iKz} dz
//! ```
//!
//! is evaluated exactly as a sum over domain walls, so superlattice
//! satellites of interlaced gratings appear without any approximation.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{ensure_positive, ensure_range, Error, Result};

/// Slack used when fitting whole periods into a length, in units of the period.
const FIT_EPS: f64 = 1e-9;

/// Explicit domain layout. `boundaries_um[j]` is where domain `j` starts;
/// domain `j` ends where `j + 1` starts (or at `length_um` for the last) and
/// carries sign `start_sign·(−1)^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainPattern {
    boundaries_um: Vec<f64>,
    start_sign: i8,
    length_um: f64,
}

impl DomainPattern {
    pub fn new(boundaries_um: Vec<f64>, start_sign: i8, length_um: f64) -> Result<Self> {
        if start_sign != 1 && start_sign != -1 {
            return Err(Error::InvalidParameter {
                param: "start_sign",
                reason: format!("must be +1 or -1, got {start_sign}"),
            });
        }
        ensure_positive("length_um", length_um)?;
        match boundaries_um.first() {
            Some(&first) if first == 0.0 => {}
            Some(&first) => {
                return Err(Error::InvalidParameter {
                    param: "boundaries_um",
                    reason: format!("first domain must start at z = 0, got {first}"),
                })
            }
            None => {
                return Err(Error::InvalidParameter {
                    param: "boundaries_um",
                    reason: "pattern has no domains".into(),
                })
            }
        }
        if let Some(w) = boundaries_um.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                param: "boundaries_um",
                reason: format!("boundaries must be strictly increasing ({} then {})", w[0], w[1]),
            });
        }
        if *boundaries_um.last().unwrap() >= length_um {
            return Err(Error::InvalidParameter {
                param: "boundaries_um",
                reason: "last domain starts at or beyond the pattern end".into(),
            });
        }
        Ok(Self {
            boundaries_um,
            start_sign,
            length_um,
        })
    }

    pub fn boundaries_um(&self) -> &[f64] {
        &self.boundaries_um
    }

    pub fn start_sign(&self) -> i8 {
        self.start_sign
    }

    pub fn length_um(&self) -> f64 {
        self.length_um
    }

    pub fn domain_count(&self) -> usize {
        self.boundaries_um.len()
    }

    /// Iterates `(start, end, sign)` over all domains.
    pub fn domains(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let s0 = f64::from(self.start_sign);
        self.boundaries_um.iter().enumerate().map(move |(j, &a)| {
            let b = self.boundaries_um.get(j + 1).copied().unwrap_or(self.length_um);
            let sign = if j % 2 == 0 { s0 } else { -s0 };
            (a, b, sign)
        })
    }

    /// g(z), with z outside [0, L] mapped to 0.
    pub fn sign_at(&self, z: f64) -> f64 {
        if !(0.0..self.length_um).contains(&z) {
            return 0.0;
        }
        let j = self.boundaries_um.partition_point(|&b| b <= z) - 1;
        let s0 = f64::from(self.start_sign);
        if j % 2 == 0 {
            s0
        } else {
            -s0
        }
    }

    /// Copy with one domain wall moved by `shift_um` (must stay ordered).
    pub fn with_shifted_boundary(&self, index: usize, shift_um: f64) -> Result<Self> {
        if index == 0 || index >= self.boundaries_um.len() {
            return Err(Error::Input(format!("boundary {index} cannot be moved")));
        }
        let mut b = self.boundaries_um.clone();
        b[index] += shift_um;
        Self::new(b, self.start_sign, self.length_um)
    }

    /// Writes the pattern as CSV: `#` metadata lines, then one boundary per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# start_sign={}", self.start_sign)?;
        writeln!(w, "# length_um={}", self.length_um)?;
        writeln!(w, "boundary_um")?;
        for b in &self.boundaries_um {
            writeln!(w, "{b}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut start_sign = None;
        let mut length = None;
        let mut boundaries = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let bad = |_| Error::Format(format!("line {}: bad value for {}", lineno + 1, k.trim()));
                    match k.trim() {
                        "start_sign" => start_sign = Some(v.trim().parse::<i8>().map_err(bad)?),
                        "length_um" => length = Some(v.trim().parse::<f64>().map_err(|_| {
                            Error::Format(format!("line {}: bad value for length_um", lineno + 1))
                        })?),
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_header {
                if line != "boundary_um" {
                    return Err(Error::Format(format!("line {}: expected header `boundary_um`", lineno + 1)));
                }
                seen_header = true;
                continue;
            }
            boundaries.push(
                line.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: not a number: `{line}`", lineno + 1)))?,
            );
        }
        let start_sign = start_sign.ok_or_else(|| Error::Format("missing `# start_sign=` header".into()))?;
        let length = length.ok_or_else(|| Error::Format("missing `# length_um=` header".into()))?;
        Self::new(boundaries, start_sign, length)
    }
}

/// A run of full poling periods, each a positive (start-sign) domain of
/// `duty·period` followed by an inverted one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoledSection {
    pub start_um: f64,
    pub period_um: f64,
    pub periods: usize,
    pub duty: f64,
    /// Which period of a bi-periodic design this section belongs to (0 or 1).
    pub family: usize,
}

impl PoledSection {
    pub fn end_um(&self) -> f64 {
        self.start_um + self.periods as f64 * self.period_um
    }

    pub fn length_um(&self) -> f64 {
        self.periods as f64 * self.period_um
    }
}

/// How the space between (and after) poled sections is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapFill {
    /// Gaps are unpoled and keep the start sign.
    Unpoled,
    /// Gaps extend the preceding domain (plain concatenation of gratings).
    ExtendPrevious,
}

/// Assembles a pattern from non-overlapping, ordered sections.
pub fn pattern_from_sections(
    sections: &[PoledSection],
    length_um: f64,
    start_sign: i8,
    gaps: GapFill,
) -> Result<DomainPattern> {
    ensure_positive("length_um", length_um)?;
    let s0 = start_sign;
    // (position, sign of the domain that starts there)
    let mut walls: Vec<(f64, i8)> = vec![(0.0, s0)];
    let mut push = |z: f64, sign: i8| {
        let last = walls.last_mut().unwrap();
        if z <= last.0 {
            last.1 = sign;
        } else if last.1 != sign {
            walls.push((z, sign));
        }
    };
    let mut cursor = 0.0;
    for sec in sections {
        if sec.start_um < cursor - 1e-9 {
            return Err(Error::InvalidParameter {
                param: "sections",
                reason: format!("section at {} µm overlaps the previous one", sec.start_um),
            });
        }
        for j in 0..sec.periods {
            let z = sec.start_um + j as f64 * sec.period_um;
            push(z, s0);
            push(z + sec.duty * sec.period_um, -s0);
        }
        cursor = sec.end_um();
        if cursor > length_um * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter {
                param: "sections",
                reason: "sections extend beyond the pattern length".into(),
            });
        }
        if gaps == GapFill::Unpoled && cursor < length_um {
            push(cursor, s0);
        }
    }
    // A trailing wall exactly at the end would create an empty domain.
    if walls.last().map(|w| w.0 >= length_um).unwrap_or(false) {
        walls.pop();
    }
    DomainPattern::new(walls.into_iter().map(|w| w.0).collect(), s0, length_um)
}

fn check_duty(duty: f64) -> Result<()> {
    if duty.is_finite() && duty > 0.0 && duty < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            param: "duty",
            reason: format!("duty cycle must lie in (0, 1), got {duty}"),
        })
    }
}

fn whole_periods(length_um: f64, period_um: f64) -> usize {
    (length_um / period_um + FIT_EPS).floor().max(0.0) as usize
}

/// ⌊L/Λ⌋ full periods starting at z = 0; a remainder shorter than one
/// period lengthens the last (inverted) domain.
pub fn build_uniform(period_um: f64, length_mm: f64, duty: f64) -> Result<DomainPattern> {
    ensure_positive("period_um", period_um)?;
    ensure_positive("length_mm", length_mm)?;
    check_duty(duty)?;
    let length_um = length_mm * 1e3;
    let periods = whole_periods(length_um, period_um);
    if periods == 0 {
        return Err(Error::InvalidParameter {
            param: "length_mm",
            reason: "shorter than one poling period".into(),
        });
    }
    let section = PoledSection {
        start_um: 0.0,
        period_um,
        periods,
        duty,
        family: 0,
    };
    pattern_from_sections(&[section], length_um, 1, GapFill::ExtendPrevious)
}

/// Two uniform gratings of `length_each_mm`, the first at Λ1 then Λ2.
pub fn build_sequential(period1_um: f64, period2_um: f64, length_each_mm: f64, duty: f64) -> Result<DomainPattern> {
    ensure_positive("period1_um", period1_um)?;
    ensure_positive("period2_um", period2_um)?;
    ensure_positive("length_each_mm", length_each_mm)?;
    check_duty(duty)?;
    let each = length_each_mm * 1e3;
    let sections = [
        PoledSection {
            start_um: 0.0,
            period_um: period1_um,
            periods: whole_periods(each, period1_um),
            duty,
            family: 0,
        },
        PoledSection {
            start_um: each,
            period_um: period2_um,
            periods: whole_periods(each, period2_um),
            duty,
            family: 1,
        },
    ];
    if sections.iter().any(|s| s.periods == 0) {
        return Err(Error::InvalidParameter {
            param: "length_each_mm",
            reason: "shorter than one poling period".into(),
        });
    }
    pattern_from_sections(&sections, 2.0 * each, 1, GapFill::ExtendPrevious)
}

/// Parameters of an interlaced bi-periodic grating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterlacedSpec {
    pub period1_um: f64,
    pub period2_um: f64,
    pub periods_per_section: usize,
    pub length_mm: f64,
    #[serde(default = "default_duty")]
    pub duty: f64,
}

fn default_duty() -> f64 {
    0.5
}

impl InterlacedSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("period1_um", self.period1_um)?;
        ensure_positive("period2_um", self.period2_um)?;
        if self.period1_um == self.period2_um {
            return Err(Error::InvalidParameter {
                param: "period2_um",
                reason: "the two poling periods must differ".into(),
            });
        }
        if self.periods_per_section == 0 {
            return Err(Error::InvalidParameter {
                param: "periods_per_section",
                reason: "need at least one period per section".into(),
            });
        }
        ensure_positive("length_mm", self.length_mm)?;
        check_duty(self.duty)
    }
}

/// An interlaced grating together with its section layout.
#[derive(Clone, Debug, PartialEq)]
pub struct InterlacedGrating {
    pub spec: InterlacedSpec,
    pub sections: Vec<PoledSection>,
    pub pattern: DomainPattern,
}

impl InterlacedGrating {
    /// Start positions of the sections of one period family.
    pub fn section_starts(&self, family: usize) -> Vec<f64> {
        self.sections
            .iter()
            .filter(|s| s.family == family)
            .map(|s| s.start_um)
            .collect()
    }

    pub fn section_count(&self, family: usize) -> usize {
        self.sections.iter().filter(|s| s.family == family).count()
    }

    /// Poled length over total length.
    pub fn poled_fraction(&self) -> f64 {
        self.sections.iter().map(PoledSection::length_um).sum::<f64>() / self.pattern.length_um()
    }

    /// Mean start-to-start distance of consecutive sections of `family`.
    pub fn mean_superperiod_um(&self, family: usize) -> f64 {
        let starts = self.section_starts(family);
        if starts.len() < 2 {
            return self.pattern.length_um();
        }
        (starts[starts.len() - 1] - starts[0]) / (starts.len() - 1) as f64
    }

    /// Unpoled gaps inserted before each section after the first.
    pub fn gaps_um(&self) -> Vec<f64> {
        self.sections.windows(2).map(|w| w[1].start_um - w[0].end_um()).collect()
    }
}

/// Alternating sections of N periods at Λ1 and Λ2.
///
/// Each section of period Λₖ starts at the first point at or after the end of
/// the previous section that lies on the Λₖ lattice anchored at the first Λₖ
/// section, so every Λₖ domain stays phase-coherent with all the others. The
/// gaps are the smallest that satisfy this and are left unpoled. A final
/// section is truncated to the periods that still fit.
pub fn build_interlaced(spec: &InterlacedSpec) -> Result<InterlacedGrating> {
    spec.validate()?;
    let length_um = spec.length_mm * 1e3;
    let periods = [spec.period1_um, spec.period2_um];
    let mut origins: [Option<f64>; 2] = [None, None];
    let mut sections = Vec::new();
    let mut z = 0.0;
    let mut family = 0;
    loop {
        let period = periods[family];
        let origin = *origins[family].get_or_insert(z);
        let steps = ((z - origin) / period - FIT_EPS).ceil().max(0.0);
        let start = origin + steps * period;
        let fit = whole_periods(length_um - start, period);
        let n = fit.min(spec.periods_per_section);
        if n == 0 {
            break;
        }
        let section = PoledSection {
            start_um: start,
            period_um: period,
            periods: n,
            duty: spec.duty,
            family,
        };
        z = section.end_um();
        sections.push(section);
        if n < spec.periods_per_section {
            break;
        }
        family ^= 1;
    }
    if sections.is_empty() {
        return Err(Error::InvalidParameter {
            param: "length_mm",
            reason: "too short for a single poling period".into(),
        });
    }
    let pattern = pattern_from_sections(&sections, length_um, 1, GapFill::Unpoled)?;
    Ok(InterlacedGrating {
        spec: spec.clone(),
        sections,
        pattern,
    })
}

/// Exact normalized Fourier amplitude G(K) of the pattern (K in rad/µm).
pub fn fourier_amplitude(pattern: &DomainPattern, k: f64) -> Complex64 {
    let l = pattern.length_um;
    let b = &pattern.boundaries_um;
    let s0 = f64::from(pattern.start_sign);
    if k.abs() < 1e-12 {
        let sum: f64 = pattern.domains().map(|(a, e, s)| s * (e - a)).sum();
        return Complex64::new(sum / l, 0.0);
    }
    // ∫ g e^{-iKz} = (1/iK)[s₀ − s_last e^{-iKL} + Σ_{j≥1} (s_j − s_{j−1}) e^{-iK z_j}]
    // and s_j − s_{j−1} = 2 s_j for alternating signs.
    let mut acc = Complex64::new(s0, 0.0);
    for (j, &z) in b.iter().enumerate().skip(1) {
        let s = if j % 2 == 0 { s0 } else { -s0 };
        acc += 2.0 * s * Complex64::from_polar(1.0, -k * z);
    }
    let s_last = if (b.len() - 1) % 2 == 0 { s0 } else { -s0 };
    acc -= s_last * Complex64::from_polar(1.0, -k * l);
    acc / (Complex64::i() * k * l)
}

/// G(K) with an extra z-dependent phase e^{-iφ(z)} applied to g(z).
///
/// The phase is sampled at each domain centre and held constant across the
/// domain, which is exact for phases that vary slowly on the domain scale.
pub fn fourier_amplitude_perturbed<F>(pattern: &DomainPattern, k: f64, phase: F) -> Complex64
where
    F: Fn(f64) -> f64,
{
    let l = pattern.length_um;
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, b, s) in pattern.domains() {
        let extra = Complex64::from_polar(1.0, -phase(0.5 * (a + b)));
        let seg = if k.abs() < 1e-12 {
            Complex64::new(b - a, 0.0)
        } else {
            (Complex64::from_polar(1.0, -k * a) - Complex64::from_polar(1.0, -k * b)) / (Complex64::i() * k)
        };
        acc += s * extra * seg;
    }
    acc / l
}

/// Quadratic phase φ(z) = rate·(z − L/2)², i.e. a grating wave vector that
/// drifts linearly along the device. `rate` in rad/µm².
pub fn linear_chirp(pattern: &DomainPattern, rate: f64) -> impl Fn(f64) -> f64 {
    let mid = 0.5 * pattern.length_um;
    move |z| rate * (z - mid) * (z - mid)
}

/// Sampled |G(K)|² over a uniform K grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GratingSpectrum {
    pub k: Vec<f64>,
    pub power: Vec<f64>,
}

/// Local maximum of a sampled curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub x: f64,
    pub value: f64,
}

/// Local maxima at or above `rel_threshold · max(values)`.
pub fn find_peaks(x: &[f64], values: &[f64], rel_threshold: f64) -> Vec<Peak> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = rel_threshold * max;
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let v = values[i];
            let left = i == 0 || v > values[i - 1];
            let right = i + 1 == n || v >= values[i + 1];
            v >= floor && left && right
        })
        .map(|i| Peak {
            index: i,
            x: x[i],
            value: values[i],
        })
        .collect()
}

impl GratingSpectrum {
    pub fn peaks(&self, rel_threshold: f64) -> Vec<Peak> {
        find_peaks(&self.k, &self.power, rel_threshold)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(String, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "k_rad_per_um,power")?;
        for (k, p) in self.k.iter().zip(&self.power) {
            writeln!(w, "{k:.12e},{p:.12e}")?;
        }
        Ok(())
    }
}

/// Uniform grid of `n` points spanning `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// |G(K)|² on `n_points` samples of `[k_min, k_max]`. Samples are evaluated
/// in parallel; output order follows the grid.
pub fn spectrum(pattern: &DomainPattern, k_min: f64, k_max: f64, n_points: usize) -> Result<GratingSpectrum> {
    if n_points < 2 {
        return Err(Error::InvalidParameter {
            param: "n_points",
            reason: "need at least two samples".into(),
        });
    }
    ensure_range("k_min", k_min, 0.0, f64::MAX)?;
    if !(k_max > k_min) {
        return Err(Error::InvalidParameter {
            param: "k_max",
            reason: format!("empty range [{k_min}, {k_max}]"),
        });
    }
    let k = linspace(k_min, k_max, n_points);
    let power = k.par_iter().map(|&k| fourier_amplitude(pattern, k).norm_sqr()).collect();
    Ok(GratingSpectrum { k, power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn reference_spec() -> InterlacedSpec {
        InterlacedSpec {
            period1_um: 9.30,
            period2_um: 9.37,
            periods_per_section: 10,
            length_mm: 50.0,
            duty: 0.5,
        }
    }

    #[test]
    fn uniform_small_example() {
        let p = build_uniform(10.0, 0.1, 0.5).unwrap();
        assert_eq!(p.domain_count(), 20);
        for (j, b) in p.boundaries_um().iter().enumerate() {
            assert_relative_eq!(*b, 5.0 * j as f64, epsilon = 1e-12);
        }
        assert_eq!(p.length_um(), 100.0);
    }

    #[test]
    fn uniform_period_count_for_50mm() {
        let p = build_uniform(9.30, 50.0, 0.5).unwrap();
        assert_eq!(p.domain_count(), 2 * 5376);
        assert_eq!((50_000.0f64 / 9.30).floor() as usize, 5376);
    }

    #[test]
    fn half_duty_has_zero_mean_per_period() {
        let p = build_uniform(10.0, 0.1, 0.5).unwrap();
        for period in 0..10 {
            let a = period as f64 * 10.0;
            let mean: f64 = (0..1000).map(|i| p.sign_at(a + (i as f64 + 0.5) * 0.01)).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!(fourier_amplitude(&p, 0.0).norm() < 1e-15);
    }

    #[test]
    fn first_harmonic_of_square_wave() {
        let p = build_uniform(10.0, 1.0, 0.5).unwrap();
        let g = fourier_amplitude(&p, 2.0 * PI / 10.0);
        assert_relative_eq!(g.norm(), 2.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_uniform(0.0, 1.0, 0.5).is_err());
        assert!(build_uniform(10.0, -1.0, 0.5).is_err());
        assert!(build_uniform(10.0, 1.0, 1.0).is_err());
        let mut s = reference_spec();
        s.period2_um = s.period1_um;
        assert!(build_interlaced(&s).is_err());
        s = reference_spec();
        s.periods_per_section = 0;
        assert!(build_interlaced(&s).is_err());
        assert!(DomainPattern::new(vec![0.0, 2.0, 1.0], 1, 5.0).is_err());
        assert!(DomainPattern::new(vec![0.5], 1, 5.0).is_err());
        assert!(DomainPattern::new(vec![0.0], 0, 5.0).is_err());
    }

    #[test]
    fn interlaced_spacing_rule() {
        let g = build_interlaced(&reference_spec()).unwrap();
        for (family, period) in [(0, 9.30), (1, 9.37)] {
            let starts = g.section_starts(family);
            for w in starts.windows(2) {
                let m = (w[1] - w[0]) / period;
                assert!((m - m.round()).abs() < 1e-6, "family {family}: {m}");
            }
        }
        let superperiod = g.section_starts(0)[1] - g.section_starts(0)[0];
        let m = superperiod / 9.30;
        assert!((m - m.round()).abs() < 1e-9);
        let n1 = g.section_count(0) as i64;
        let n2 = g.section_count(1) as i64;
        assert!((n1 - n2).abs() <= 1, "{n1} vs {n2}");
        let gaps = g.gaps_um();
        assert!(gaps.iter().all(|&d| d >= -1e-9 && d < 9.37));
        assert!(g.poled_fraction() >= 0.9, "{}", g.poled_fraction());
        let end = g.sections.last().unwrap().end_um();
        assert!(g.pattern.length_um() - end < 2.0 * 9.37);
    }

    #[test]
    fn interlaced_main_peaks_share_the_grating() {
        let g = build_interlaced(&reference_spec()).unwrap();
        let a = fourier_amplitude(&g.pattern, 2.0 * PI / 9.30).norm();
        let b = fourier_amplitude(&g.pattern, 2.0 * PI / 9.37).norm();
        assert!((a - b).abs() / a < 0.01, "{a} {b}");
        assert!((a - 1.0 / PI).abs() / (1.0 / PI) < 0.06, "{a}");
        // sublattice amplitude is the full-grating coefficient times the poled share
        let share = g.poled_fraction() / 2.0;
        assert!((a - 2.0 / PI * share).abs() < 0.01, "{a}");
    }

    #[test]
    fn sequential_concatenates() {
        let seq = build_sequential(9.30, 9.37, 25.0, 0.5).unwrap();
        let u1 = build_uniform(9.30, 25.0, 0.5).unwrap();
        let u2 = build_uniform(9.37, 25.0, 0.5).unwrap();
        assert_eq!(seq.domain_count(), u1.domain_count() + u2.domain_count());
        assert_relative_eq!(seq.length_um(), 50_000.0);
    }

    #[test]
    fn uniform_spectrum_has_one_dominant_peak() {
        let p = build_uniform(9.30, 5.0, 0.5).unwrap();
        let s = spectrum(&p, 0.6, 0.75, 4001).unwrap();
        let peaks = s.peaks(0.5);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].x - 2.0 * PI / 9.30).abs() < (0.15 / 4000.0));
    }

    #[test]
    fn spectrum_rejects_empty_range() {
        let p = build_uniform(9.30, 1.0, 0.5).unwrap();
        assert!(spectrum(&p, 0.7, 0.6, 10).is_err());
        assert!(spectrum(&p, 0.6, 0.7, 1).is_err());
    }

    #[test]
    fn perturbed_matches_unperturbed_for_zero_phase() {
        let g = build_interlaced(&InterlacedSpec { length_mm: 2.0, ..reference_spec() }).unwrap();
        for k in [0.0, 0.3, 0.6756, 0.7] {
            let a = fourier_amplitude(&g.pattern, k);
            let b = fourier_amplitude_perturbed(&g.pattern, k, |_| 0.0);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = build_interlaced(&InterlacedSpec { length_mm: 1.0, ..reference_spec() }).unwrap();
        let mut buf = Vec::new();
        g.pattern.write_csv(&mut buf).unwrap();
        let back = DomainPattern::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, g.pattern);
        assert!(DomainPattern::read_csv(std::io::Cursor::new("boundary_um\n0\n")).is_err());
    }

    fn arb_pattern() -> impl Strategy<Value = DomainPattern> {
        (prop::collection::vec(0.5f64..20.0, 1..40), prop::bool::ANY).prop_map(|(widths, pos)| {
            let mut b = Vec::with_capacity(widths.len());
            let mut z = 0.0;
            for w in &widths {
                b.push(z);
                z += w;
            }
            DomainPattern::new(b, if pos { 1 } else { -1 }, z).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn amplitude_bounded_by_one(p in arb_pattern(), k in 0.0f64..2.0) {
            prop_assert!(fourier_amplitude(&p, k).norm() <= 1.0 + 1e-12);
        }

        #[test]
        fn dc_is_signed_imbalance(p in arb_pattern()) {
            let imbalance: f64 = p.domains().map(|(a, b, s)| s * (b - a)).sum::<f64>() / p.length_um();
            let g0 = fourier_amplitude(&p, 0.0);
            prop_assert!((g0.re - imbalance).abs() < 1e-12 && g0.im == 0.0);
            // limit K → 0 is continuous
            prop_assert!((fourier_amplitude(&p, 1e-9) - g0).norm() < 1e-6);
        }

        #[test]
        fn closed_form_matches_trapezoid(p in arb_pattern(), k in 0.0f64..1.0) {
            let exact = fourier_amplitude(&p, k);
            let brute = qpm_oracle::trapezoid_fourier(p.boundaries_um(), f64::from(p.start_sign()), p.length_um(), k, 1e-3);
            prop_assert!((exact - brute).norm() < 1e-6, "{} vs {}", exact, brute);
        }

        #[test]
        fn boundary_perturbation_is_stable(p in arb_pattern(), k in 0.0f64..1.0, eps in -0.2f64..0.2, pick in 0.0f64..1.0) {
            // domains are at least 0.5 µm wide, so any |ε| < 0.2 keeps the order
            prop_assume!(p.domain_count() > 1);
            let idx = 1 + ((pick * (p.domain_count() - 1) as f64) as usize).min(p.domain_count() - 2);
            let q = p.with_shifted_boundary(idx, eps).unwrap();
            let delta = (fourier_amplitude(&q, k) - fourier_amplitude(&p, k)).norm();
            prop_assert!(delta <= 2.0 * eps.abs() / p.length_um() + 1e-12);
        }
    }
}
