//! The two-process polarization-entangled pair state
//!
//! ```text
//! |ψ⟩ = w_A·f_A(λ_s)|H⟩_s|V⟩_i + w_B·e^{iΦ}·f_B(λ_s)|V⟩_s|H⟩_i
//! ```
//!
//! with H = TE and V = TM, filtering, and the visibility model
//! V_DA = O·V_multi(α), V_HV = V_multi(α).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::Polarization;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::phasematch::SpectralAmplitude;

#[derive(Clone, Debug, PartialEq)]
pub struct BiphotonState {
    amp_a: SpectralAmplitude,
    amp_b: SpectralAmplitude,
    phase_rad: f64,
    weight_a: f64,
    weight_b: f64,
    heralding_factor: f64,
}

fn same_grid(a: &SpectralAmplitude, b: &SpectralAmplitude) -> bool {
    a.pump_um == b.pump_um && a.signal_um == b.signal_um && a.amplitude.len() == a.signal_um.len() && b.amplitude.len() == b.signal_um.len()
}

/// Builds the state from the |H⟩_s|V⟩_i amplitude `amp_a` and the
/// |V⟩_s|H⟩_i amplitude `amp_b`. Weights default to 1/√2 each and are
/// normalized to w_A² + w_B² = 1.
pub fn assemble_state(
    amp_a: SpectralAmplitude,
    amp_b: SpectralAmplitude,
    phase_rad: f64,
    weights: Option<(f64, f64)>,
) -> Result<BiphotonState> {
    if !same_grid(&amp_a, &amp_b) {
        return Err(Error::Shape("both processes must share the signal grid and pump".into()));
    }
    if !phase_rad.is_finite() {
        return Err(Error::InvalidParameter {
            param: "phase_rad",
            reason: "must be finite".into(),
        });
    }
    let (wa, wb) = weights.unwrap_or((1.0, 1.0));
    ensure_non_negative("weight_a", wa)?;
    ensure_non_negative("weight_b", wb)?;
    let norm = wa.hypot(wb);
    if norm == 0.0 {
        return Err(Error::InvalidParameter {
            param: "weights",
            reason: "at least one weight must be positive".into(),
        });
    }
    Ok(BiphotonState {
        amp_a,
        amp_b,
        phase_rad,
        weight_a: wa / norm,
        weight_b: wb / norm,
        heralding_factor: 1.0,
    })
}

impl BiphotonState {
    pub fn amp_a(&self) -> &SpectralAmplitude {
        &self.amp_a
    }

    pub fn amp_b(&self) -> &SpectralAmplitude {
        &self.amp_b
    }

    pub fn phase_rad(&self) -> f64 {
        self.phase_rad
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.weight_a, self.weight_b)
    }

    /// Fraction of pair probability transmitted by all filters applied so far.
    pub fn heralding_factor(&self) -> f64 {
        self.heralding_factor
    }

    pub fn signal_um(&self) -> &[f64] {
        &self.amp_a.signal_um
    }

    /// Polarization concurrence 2·w_A·w_B·O.
    pub fn concurrence(&self) -> Result<f64> {
        Ok(2.0 * self.weight_a * self.weight_b * spectral_overlap(self)?)
    }

    pub fn to_record(&self) -> StateRecord {
        let split = |a: &[Complex64]| (a.iter().map(|c| c.re).collect(), a.iter().map(|c| c.im).collect());
        let (a_re, a_im) = split(&self.amp_a.amplitude);
        let (b_re, b_im) = split(&self.amp_b.amplitude);
        StateRecord {
            pump_um: self.amp_a.pump_um,
            temperature_c: self.amp_a.temperature_c,
            signal_um: self.amp_a.signal_um.clone(),
            amp_a_re: a_re,
            amp_a_im: a_im,
            amp_b_re: b_re,
            amp_b_im: b_im,
            phase_rad: self.phase_rad,
            weight_a: self.weight_a,
            weight_b: self.weight_b,
            heralding_factor: self.heralding_factor,
        }
    }

    pub fn from_record(r: &StateRecord) -> Result<Self> {
        let n = r.signal_um.len();
        if [r.amp_a_re.len(), r.amp_a_im.len(), r.amp_b_re.len(), r.amp_b_im.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape("amplitude arrays must match the grid length".into()));
        }
        let join = |re: &[f64], im: &[f64]| re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let make = |pol: Polarization, re: &[f64], im: &[f64]| {
            let amp = SpectralAmplitude {
                pump_um: r.pump_um,
                temperature_c: r.temperature_c,
                signal_pol: pol,
                idler_pol: pol.orthogonal(),
                signal_um: r.signal_um.clone(),
                amplitude: Vec::new(),
                fwhm_nm: f64::NAN,
            };
            amp.with_amplitude(join(re, im))
        };
        let mut state = assemble_state(
            make(Polarization::TE, &r.amp_a_re, &r.amp_a_im),
            make(Polarization::TM, &r.amp_b_re, &r.amp_b_im),
            r.phase_rad,
            Some((r.weight_a, r.weight_b)),
        )?;
        ensure_positive("heralding_factor", r.heralding_factor)?;
        state.heralding_factor = r.heralding_factor;
        Ok(state)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("state record serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(s)?)
    }
}

/// JSON form of a state: the grid and complex amplitudes split into real and
/// imaginary arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub pump_um: f64,
    pub temperature_c: f64,
    pub signal_um: Vec<f64>,
    pub amp_a_re: Vec<f64>,
    pub amp_a_im: Vec<f64>,
    pub amp_b_re: Vec<f64>,
    pub amp_b_im: Vec<f64>,
    pub phase_rad: f64,
    pub weight_a: f64,
    pub weight_b: f64,
    pub heralding_factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterShape {
    Rectangular,
    Gaussian,
}

/// Intensity bandpass filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub center_um: f64,
    pub fwhm_nm: f64,
    pub shape: FilterShape,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("center_um", self.center_um)?;
        ensure_positive("fwhm_nm", self.fwhm_nm)
    }

    /// Intensity transmission in [0, 1].
    pub fn transmission(&self, wavelength_um: f64) -> f64 {
        let d = (wavelength_um - self.center_um) * 1e3;
        match self.shape {
            FilterShape::Rectangular => {
                if d.abs() <= 0.5 * self.fwhm_nm {
                    1.0
                } else {
                    0.0
                }
            }
            FilterShape::Gaussian => (-4.0 * std::f64::consts::LN_2 * d * d / (self.fwhm_nm * self.fwhm_nm)).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Signal,
    Idler,
    Both,
}

fn grid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let lo = x[i.saturating_sub(1)];
            let hi = x[(i + 1).min(n - 1)];
            0.5 * (hi - lo).abs()
        })
        .collect()
}

fn norm_sqr(x: &[f64], a: &[Complex64]) -> f64 {
    grid_weights(x).iter().zip(a).map(|(w, c)| w * c.norm_sqr()).sum()
}

/// Multiplies both amplitudes by √T of the filter in the chosen arm (the
/// idler arm sees wavelength λ_i(λ_s)). Amplitudes are not rescaled, so no
/// norm grows; the process weights are renormalized and the transmitted
/// pair fraction is folded into the heralding factor.
pub fn apply_filter(state: &BiphotonState, filter: &FilterSpec, arm: Arm) -> Result<BiphotonState> {
    filter.validate()?;
    let grid = state.signal_um();
    let idler = state.amp_a.idler_um();
    let amplitude_factor: Vec<f64> = grid
        .iter()
        .zip(&idler)
        .map(|(&s, &i)| {
            let t = match arm {
                Arm::Signal => filter.transmission(s),
                Arm::Idler => filter.transmission(i),
                Arm::Both => filter.transmission(s) * filter.transmission(i),
            };
            t.sqrt()
        })
        .collect();
    let filtered = |amp: &SpectralAmplitude| {
        amp.amplitude
            .iter()
            .zip(&amplitude_factor)
            .map(|(a, f)| a * *f)
            .collect::<Vec<_>>()
    };
    let fa = filtered(&state.amp_a);
    let fb = filtered(&state.amp_b);
    let pre = [norm_sqr(grid, &state.amp_a.amplitude), norm_sqr(grid, &state.amp_b.amplitude)];
    let post = [norm_sqr(grid, &fa), norm_sqr(grid, &fb)];
    let ta = if pre[0] > 0.0 { post[0] / pre[0] } else { 0.0 };
    let tb = if pre[1] > 0.0 { post[1] / pre[1] } else { 0.0 };
    let transmitted = state.weight_a.powi(2) * ta + state.weight_b.powi(2) * tb;
    if !(transmitted > 0.0) {
        return Err(Error::FilteredToExtinction);
    }
    let wa = state.weight_a * ta.sqrt();
    let wb = state.weight_b * tb.sqrt();
    let norm = wa.hypot(wb);
    Ok(BiphotonState {
        amp_a: state.amp_a.with_amplitude(fa),
        amp_b: state.amp_b.with_amplitude(fb),
        phase_rad: state.phase_rad,
        weight_a: wa / norm,
        weight_b: wb / norm,
        heralding_factor: state.heralding_factor * transmitted,
    })
}

/// O = |⟨f_A, f_B⟩| / (‖f_A‖·‖f_B‖) on the shared signal grid.
pub fn spectral_overlap(state: &BiphotonState) -> Result<f64> {
    let grid = state.signal_um();
    let w = grid_weights(grid);
    let a = &state.amp_a.amplitude;
    let b = &state.amp_b.amplitude;
    let na = norm_sqr(grid, a).sqrt();
    let nb = norm_sqr(grid, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidParameter {
            param: "amplitude",
            reason: "overlap of a zero-norm amplitude".into(),
        });
    }
    let inner: Complex64 = w.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| *w * x.conj() * y).sum();
    Ok((inner.norm() / (na * nb)).min(1.0))
}

/// Fringe visibility limited by multi-pair emission, 1/(1 + α).
pub fn multiphoton_visibility(alpha: f64) -> Result<f64> {
    ensure_non_negative("alpha", alpha)?;
    Ok(1.0 / (1.0 + alpha))
}

/// Mean pair number per coincidence window: rate (pairs/s) × window (ns).
pub fn mean_pair_number(pair_rate_per_s: f64, window_ns: f64) -> Result<f64> {
    ensure_non_negative("pair_rate_per_s", pair_rate_per_s)?;
    ensure_non_negative("window_ns", window_ns)?;
    Ok(pair_rate_per_s * window_ns * 1e-9)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    HV,
    DA,
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HV" => Ok(Basis::HV),
            "DA" => Ok(Basis::DA),
            _ => Err(Error::Input(format!("unknown basis `{s}` (expected HV or DA)"))),
        }
    }
}

/// Visibility from overlap through the multi-pair limit.
pub fn visibility_from_overlap(overlap: f64, alpha: f64, basis: Basis) -> Result<f64> {
    crate::error::ensure_range("overlap", overlap, 0.0, 1.0)?;
    let vm = multiphoton_visibility(alpha)?;
    Ok(match basis {
        Basis::HV => vm,
        Basis::DA => overlap * vm,
    })
}

pub fn predicted_visibility(state: &BiphotonState, alpha: f64, basis: Basis) -> Result<f64> {
    let overlap = match basis {
        Basis::HV => 1.0,
        Basis::DA => spectral_overlap(state)?,
    };
    visibility_from_overlap(overlap, alpha, basis)
}

/// Delay applied between the H and V components, ps (negative: H advanced).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSpec {
    pub delay_ps: f64,
}

/// |Δτ/2 + delay|: zero when the compensator cancels half the source delay.
pub fn compensation_residual(source_delay_ps: f64, comp: &CompensationSpec) -> f64 {
    (0.5 * source_delay_ps + comp.delay_ps).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grating::{build_uniform, linear_chirp, linspace};
    use crate::phasematch::process_spectrum;
    use crate::{device, dispersion::DispersionModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gaussian_amp(grid: &[f64], center: f64, width: f64, pol: Polarization) -> SpectralAmplitude {
        SpectralAmplitude {
            pump_um: 0.78,
            temperature_c: 156.4,
            signal_pol: pol,
            idler_pol: pol.orthogonal(),
            signal_um: grid.to_vec(),
            amplitude: grid
                .iter()
                .map(|&x| Complex64::new((-(x - center).powi(2) / (2.0 * width * width)).exp(), 0.0))
                .collect(),
            fwhm_nm: 2.3548 * width * 1e3 / 2f64.sqrt(),
        }
    }

    fn grid() -> Vec<f64> {
        linspace(1.545, 1.555, 2001)
    }

    fn pair(center_b: f64) -> BiphotonState {
        let g = grid();
        assemble_state(
            gaussian_amp(&g, 1.55, 3e-4, Polarization::TE),
            gaussian_amp(&g, center_b, 3e-4, Polarization::TM),
            0.0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn default_weights_are_balanced() {
        let s = pair(1.55);
        let (a, b) = s.weights();
        assert_relative_eq!(a, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert!((a * a + b * b - 1.0).abs() < 1e-12);
        assert_relative_eq!(s.concurrence().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_process_has_no_concurrence() {
        let g = grid();
        let s = assemble_state(
            gaussian_amp(&g, 1.55, 3e-4, Polarization::TE),
            gaussian_amp(&g, 1.55, 3e-4, Polarization::TM),
            0.0,
            Some((1.0, 0.0)),
        )
        .unwrap();
        assert_eq!(s.concurrence().unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = gaussian_amp(&grid(), 1.55, 3e-4, Polarization::TE);
        let b = gaussian_amp(&linspace(1.545, 1.555, 2000), 1.55, 3e-4, Polarization::TM);
        assert!(matches!(assemble_state(a, b, 0.0, None), Err(Error::Shape(_))));
    }

    #[test]
    fn overlap_limits() {
        assert_relative_eq!(spectral_overlap(&pair(1.55)).unwrap(), 1.0, epsilon = 1e-12);
        assert!(spectral_overlap(&pair(1.5545)).unwrap() < 1e-12);
        // Gaussian overlap exp(-d²/4σ²)
        let d = 2e-4;
        assert_relative_eq!(spectral_overlap(&pair(1.55 + d)).unwrap(), (-d * d / (4.0 * 9e-8)).exp(), max_relative = 1e-6);
    }

    #[test]
    fn wide_filter_is_transparent() {
        let s = pair(1.55);
        let f = FilterSpec {
            center_um: 1.55,
            fwhm_nm: 13.0,
            shape: FilterShape::Rectangular,
        };
        let out = apply_filter(&s, &f, Arm::Signal).unwrap();
        assert_eq!(out.amp_a().amplitude, s.amp_a().amplitude);
        assert_relative_eq!(out.heralding_factor(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_filter_extinguishes() {
        let f = FilterSpec {
            center_um: 1.60,
            fwhm_nm: 1.0,
            shape: FilterShape::Rectangular,
        };
        assert!(matches!(apply_filter(&pair(1.55), &f, Arm::Both), Err(Error::FilteredToExtinction)));
    }

    #[test]
    fn idler_filter_acts_on_the_mirrored_wavelength() {
        let s = pair(1.55);
        let idler_center = 1.0 / (1.0 / 0.78 - 1.0 / 1.55);
        let f = FilterSpec {
            center_um: idler_center,
            fwhm_nm: 0.2,
            shape: FilterShape::Gaussian,
        };
        let out = apply_filter(&s, &f, Arm::Idler).unwrap();
        assert!(out.heralding_factor() < 1.0 && out.heralding_factor() > 0.1);
        let peak = out.amp_a().peak_signal_um();
        assert!((peak - 1.55).abs() < 2e-5);
    }

    #[test]
    fn phase_flip_keeps_overlap() {
        let g = grid();
        let s = assemble_state(
            gaussian_amp(&g, 1.55, 3e-4, Polarization::TE),
            gaussian_amp(&g, 1.55, 3e-4, Polarization::TM),
            std::f64::consts::PI,
            None,
        )
        .unwrap();
        assert_relative_eq!(spectral_overlap(&s).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(s.phase_rad(), std::f64::consts::PI);
    }

    #[test]
    fn multiphoton_anchors() {
        assert_eq!(multiphoton_visibility(0.0).unwrap(), 1.0);
        assert!((multiphoton_visibility(0.08).unwrap() - 0.925).abs() < 0.005);
        assert!(multiphoton_visibility(0.03).unwrap() > 0.95);
        assert!(multiphoton_visibility(-0.1).is_err());
    }

    #[test]
    fn mean_pair_number_is_rate_times_window() {
        assert_relative_eq!(mean_pair_number(2e7, 4.0).unwrap(), 0.08, epsilon = 1e-15);
        assert_eq!(mean_pair_number(0.0, 4.0).unwrap(), 0.0);
        assert_relative_eq!(mean_pair_number(2e7, 2.0).unwrap(), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn visibility_examples() {
        assert_relative_eq!(visibility_from_overlap(1.0, 0.03, Basis::DA).unwrap(), 1.0 / 1.03);
        assert!((visibility_from_overlap(0.756, 0.08, Basis::DA).unwrap() - 0.70).abs() < 0.005);
        assert_eq!(visibility_from_overlap(1.0, 0.0, Basis::HV).unwrap(), 1.0);
        assert_eq!(predicted_visibility(&pair(1.5502), 0.0, Basis::HV).unwrap(), 1.0);
    }

    #[test]
    fn compensation_examples() {
        let c = |d| CompensationSpec { delay_ps: d };
        assert_eq!(compensation_residual(16.0, &c(-8.0)), 0.0);
        assert_eq!(compensation_residual(16.0, &c(0.0)), 8.0);
        assert_eq!(compensation_residual(16.0, &c(8.0)), 16.0);
    }

    #[test]
    fn json_round_trip() {
        let s = pair(1.5501);
        let back = BiphotonState::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(back.amp_a().amplitude, s.amp_a().amplitude);
        assert_eq!(back.amp_b().amplitude, s.amp_b().amplitude);
        assert!((back.weights().0 - s.weights().0).abs() < 1e-15);
        assert!((back.weights().1 - s.weights().1).abs() < 1e-15);
    }

    struct ChirpFixture {
        model: DispersionModel,
        pattern: crate::grating::DomainPattern,
        grid: Vec<f64>,
        plain: SpectralAmplitude,
    }

    impl ChirpFixture {
        fn new(grid: Vec<f64>) -> Self {
            let model = device::calibrated_model().unwrap();
            let pattern = build_uniform(9.30, 50.0, 0.5).unwrap();
            let plain = process_spectrum(&model, &pattern, Polarization::TM, 0.78, 156.4, &grid, None).unwrap();
            Self { model, pattern, grid, plain }
        }

        fn state(&self, rate: f64) -> BiphotonState {
            let chirp = linear_chirp(&self.pattern, rate);
            let chirped =
                process_spectrum(&self.model, &self.pattern, Polarization::TM, 0.78, 156.4, &self.grid, Some(&chirp)).unwrap();
            assemble_state(self.plain.clone(), chirped, 0.0, None).unwrap()
        }
    }

    #[test]
    fn chirp_mismatch_reproduces_the_low_initial_visibility() {
        let c = device::operating_constraints()[0].signal_um;
        let fx = ChirpFixture::new(linspace(c - 0.006, c + 0.006, 1201));
        let overlap = |r: f64| spectral_overlap(&fx.state(r)).unwrap();
        // bisection on the chirp rate for O = 0.756
        let (mut lo, mut hi) = (0.0, 2e-8);
        assert!(overlap(hi) < 0.756);
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            if overlap(mid) > 0.756 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let state = fx.state(0.5 * (lo + hi));
        let v = predicted_visibility(&state, 0.08, Basis::DA).unwrap();
        assert!((v - 0.70).abs() < 0.005, "{v}");

        // narrowing the filter monotonically restores the overlap
        let mut last = spectral_overlap(&state).unwrap();
        for fwhm in [13.0, 4.0, 2.0, 1.0, 0.5] {
            let f = FilterSpec {
                center_um: c,
                fwhm_nm: fwhm,
                shape: FilterShape::Rectangular,
            };
            let o = spectral_overlap(&apply_filter(&state, &f, Arm::Signal).unwrap()).unwrap();
            assert!(o >= last - 1e-12, "{fwhm} nm: {o} < {last}");
            last = o;
        }
        assert!(last > spectral_overlap(&state).unwrap());
    }

    #[test]
    fn overlap_converges_under_refinement() {
        let c = device::operating_constraints()[0].signal_um;
        let o = |n| spectral_overlap(&ChirpFixture::new(linspace(c - 0.006, c + 0.006, n)).state(5e-9)).unwrap();
        let (a, b) = (o(601), o(1201));
        assert!((a - b).abs() / b < 1e-3, "{a} {b}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn overlap_ignores_global_phases(pa in 0.0..6.3f64, pb in 0.0..6.3f64, shift in -4e-4..4e-4f64) {
            let g = linspace(1.548, 1.552, 201);
            let mut a = gaussian_amp(&g, 1.55, 3e-4, Polarization::TE);
            let mut b = gaussian_amp(&g, 1.55 + shift, 3e-4, Polarization::TM);
            let base = spectral_overlap(&assemble_state(a.clone(), b.clone(), 0.0, None).unwrap()).unwrap();
            a.amplitude.iter_mut().for_each(|c| *c *= Complex64::from_polar(1.0, pa));
            b.amplitude.iter_mut().for_each(|c| *c *= Complex64::from_polar(1.0, pb));
            let rotated = spectral_overlap(&assemble_state(a, b, 0.0, None).unwrap()).unwrap();
            prop_assert!((rotated - base).abs() < 1e-12);
        }

        #[test]
        fn visibility_monotone(o1 in 0.0..1.0f64, o2 in 0.0..1.0f64, a1 in 0.0..1.0f64, a2 in 0.0..1.0f64) {
            let (olo, ohi) = (o1.min(o2), o1.max(o2));
            let (alo, ahi) = (a1.min(a2), a1.max(a2));
            for basis in [Basis::HV, Basis::DA] {
                prop_assert!(visibility_from_overlap(o1, ahi, basis).unwrap() <= visibility_from_overlap(o1, alo, basis).unwrap());
                prop_assert!(visibility_from_overlap(olo, a1, basis).unwrap() <= visibility_from_overlap(ohi, a1, basis).unwrap());
            }
        }

        #[test]
        fn identical_amplitudes_give_equal_basis_visibilities(alpha in 0.0..2.0f64, center in 1.549..1.551f64) {
            let g = linspace(1.548, 1.552, 201);
            let a = gaussian_amp(&g, center, 2e-4, Polarization::TE);
            let s = assemble_state(a.clone(), SpectralAmplitude { signal_pol: Polarization::TM, idler_pol: Polarization::TE, ..a }, 0.0, None).unwrap();
            let hv = predicted_visibility(&s, alpha, Basis::HV).unwrap();
            let da = predicted_visibility(&s, alpha, Basis::DA).unwrap();
            prop_assert!((hv - da).abs() < 1e-12);
        }

        #[test]
        fn filters_never_increase_norm(center in 1.546..1.554f64, fwhm in 0.05..20.0f64, gauss in any::<bool>(), arm in 0..3usize) {
            let s = pair(1.5501);
            let f = FilterSpec { center_um: center, fwhm_nm: fwhm, shape: if gauss { FilterShape::Gaussian } else { FilterShape::Rectangular } };
            let arm = [Arm::Signal, Arm::Idler, Arm::Both][arm];
            if let Ok(out) = apply_filter(&s, &f, arm) {
                let g = s.signal_um();
                prop_assert!(norm_sqr(g, &out.amp_a().amplitude) <= norm_sqr(g, &s.amp_a().amplitude) * (1.0 + 1e-12));
                prop_assert!(norm_sqr(g, &out.amp_b().amplitude) <= norm_sqr(g, &s.amp_b().amplitude) * (1.0 + 1e-12));
                prop_assert!(out.heralding_factor() <= 1.0 + 1e-12);
                let (wa, wb) = out.weights();
                prop_assert!((wa * wa + wb * wb - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dispersion_model_is_reused() {
        // guard that the calibrated model differs from bulk
        assert_ne!(device::calibrated_model().unwrap(), DispersionModel::lithium_niobate());
    }
}
