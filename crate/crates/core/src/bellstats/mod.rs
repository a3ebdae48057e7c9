//! Polarization-correlation statistics: Born-rule probabilities for the
//! two-process state, CHSH, accidental subtraction, fringe fits and a
//! seeded Monte-Carlo model of the detection chain.
//!
//! Analyzer inputs are half-wave-plate angles θ; the analysis axis of the
//! following polarizing splitter is 2θ. The "+" output of each splitter
//! transmits polarization along the analysis axis, "−" the orthogonal one.

mod counts;
mod simulate;
mod timetag;

pub use counts::*;
pub use simulate::*;
pub use timetag::*;

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

use crate::error::{ensure_range, Error, Result};

/// Two half-wave plates and the compensator phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub theta_s_rad: f64,
    pub theta_i_rad: f64,
    pub phi_sbc_rad: f64,
}

impl AnalyzerSetting {
    /// Plate angles are reduced modulo π.
    pub fn new(theta_s_rad: f64, theta_i_rad: f64, phi_sbc_rad: f64) -> Result<Self> {
        for (name, v) in [("theta_s_rad", theta_s_rad), ("theta_i_rad", theta_i_rad), ("phi_sbc_rad", phi_sbc_rad)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    param: name,
                    reason: "must be finite".into(),
                });
            }
        }
        Ok(Self {
            theta_s_rad: theta_s_rad.rem_euclid(PI),
            theta_i_rad: theta_i_rad.rem_euclid(PI),
            phi_sbc_rad,
        })
    }

    /// Setting whose analysis axes are `a`, `b`.
    pub fn from_analysis_angles(a_rad: f64, b_rad: f64, phi_sbc_rad: f64) -> Result<Self> {
        Self::new(0.5 * a_rad, 0.5 * b_rad, phi_sbc_rad)
    }

    pub fn analysis_angles(&self) -> (f64, f64) {
        (2.0 * self.theta_s_rad, 2.0 * self.theta_i_rad)
    }

    /// Same analyzer configuration up to the π period of each plate.
    pub fn matches(&self, other: &AnalyzerSetting) -> bool {
        let close = |x: f64, y: f64| {
            let d = (x - y).rem_euclid(PI);
            d < 1e-9 || PI - d < 1e-9
        };
        close(self.theta_s_rad, other.theta_s_rad)
            && close(self.theta_i_rad, other.theta_i_rad)
            && (self.phi_sbc_rad - other.phi_sbc_rad).abs() < 1e-9
    }
}

fn check_visibility(v: f64) -> Result<()> {
    ensure_range("visibility", v, 0.0, 1.0)
}

fn fringe_term(a: f64, b: f64, phi: f64) -> f64 {
    (2.0 * a).cos() * (2.0 * b).cos() - (2.0 * a).sin() * (2.0 * b).sin() * phi.cos()
}

/// Probability of a (+, +) coincidence at analysis angles `a`, `b` and total
/// phase φ:  ¼·[1 − V·(cos2a·cos2b − sin2a·sin2b·cos φ)].
pub fn coincidence_probability_at(visibility: f64, phi_rad: f64, a_rad: f64, b_rad: f64) -> Result<f64> {
    check_visibility(visibility)?;
    Ok(0.25 * (1.0 - visibility * fringe_term(a_rad, b_rad, phi_rad)))
}

/// (+, +) coincidence probability for plate setting `setting`; the total
/// phase is Φ + φ_SBC.
pub fn coincidence_probability(visibility: f64, phase_rad: f64, setting: &AnalyzerSetting) -> Result<f64> {
    let (a, b) = setting.analysis_angles();
    coincidence_probability_at(visibility, phase_rad + setting.phi_sbc_rad, a, b)
}

/// Probabilities of the four splitter pairings in the order
/// [(+,+), (+,−), (−,+), (−,−)].
pub fn pairing_probabilities(visibility: f64, phase_rad: f64, setting: &AnalyzerSetting) -> Result<[f64; 4]> {
    let (a, b) = setting.analysis_angles();
    let phi = phase_rad + setting.phi_sbc_rad;
    let p = |da: f64, db: f64| coincidence_probability_at(visibility, phi, a + da, b + db);
    Ok([p(0.0, 0.0)?, p(0.0, FRAC_PI_2)?, p(FRAC_PI_2, 0.0)?, p(FRAC_PI_2, FRAC_PI_2)?])
}

/// Parity of each pairing in [(+,+), (+,−), (−,+), (−,−)].
pub const PAIRING_PARITY: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

/// E(a, b) = −V·(cos2a·cos2b − sin2a·sin2b·cos φ) in analysis angles.
pub fn correlation(visibility: f64, phi_rad: f64, a_rad: f64, b_rad: f64) -> Result<f64> {
    check_visibility(visibility)?;
    Ok(-visibility * fringe_term(a_rad, b_rad, phi_rad))
}

/// The two analysis angles per side of a CHSH test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub a_rad: [f64; 2],
    pub b_rad: [f64; 2],
}

impl ChshAngles {
    /// a ∈ {π/4, 0}, b ∈ {3π/8, π/8}: with the sign convention
    /// S = E(a₁b₁) + E(a₁b₂) + E(a₂b₁) − E(a₂b₂) and the anticorrelated
    /// φ = 0 state these reach S = 2√2.
    pub fn standard() -> Self {
        Self {
            a_rad: [FRAC_PI_4, 0.0],
            b_rad: [3.0 * FRAC_PI_8, FRAC_PI_8],
        }
    }

    /// Setting pairs in the order (a₁b₁, a₁b₂, a₂b₁, a₂b₂).
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.a_rad[0], self.b_rad[0]),
            (self.a_rad[0], self.b_rad[1]),
            (self.a_rad[1], self.b_rad[0]),
            (self.a_rad[1], self.b_rad[1]),
        ]
    }

    pub fn analyzer_settings(&self, phi_sbc_rad: f64) -> Result<[AnalyzerSetting; 4]> {
        let p = self.pairs();
        let mk = |(a, b): (f64, f64)| AnalyzerSetting::from_analysis_angles(a, b, phi_sbc_rad);
        Ok([mk(p[0])?, mk(p[1])?, mk(p[2])?, mk(p[3])?])
    }
}

/// Signs applied to the four correlations in S.
pub const CHSH_SIGNS: [f64; 4] = [1.0, 1.0, 1.0, -1.0];

/// Closed-form S for the Werner-mixed state.
pub fn chsh_closed_form(visibility: f64, phi_rad: f64, angles: &ChshAngles) -> Result<f64> {
    let mut s = 0.0;
    for ((a, b), sign) in angles.pairs().into_iter().zip(CHSH_SIGNS) {
        s += sign * correlation(visibility, phi_rad, a, b)?;
    }
    Ok(s)
}

/// Accidental coincidence rate s₁·s₂·τ (singles in counts/s, window in ns).
pub fn accidentals(singles_1_per_s: f64, singles_2_per_s: f64, window_ns: f64) -> f64 {
    singles_1_per_s * singles_2_per_s * window_ns * 1e-9
}

/// (S − 2)/σ_S.
pub fn violation_significance(s: f64, sigma_s: f64) -> f64 {
    (s.abs() - 2.0) / sigma_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn probability_examples() {
        assert!(coincidence_probability_at(1.0, 0.0, 0.0, 0.0).unwrap().abs() < 1e-15);
        assert_relative_eq!(coincidence_probability_at(1.0, 0.0, FRAC_PI_4, FRAC_PI_4).unwrap(), 0.5, epsilon = 1e-15);
        for (a, b) in [(0.0, 0.3), (1.0, 2.0), (-0.4, 0.9)] {
            assert_relative_eq!(coincidence_probability_at(0.0, 0.7, a, b).unwrap(), 0.25, epsilon = 1e-15);
        }
        assert!(coincidence_probability_at(1.1, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn setting_uses_plate_angles() {
        let s = AnalyzerSetting::new(FRAC_PI_8, FRAC_PI_8, 0.0).unwrap();
        assert_relative_eq!(coincidence_probability(1.0, 0.0, &s).unwrap(), 0.5, epsilon = 1e-15);
        let wrapped = AnalyzerSetting::new(FRAC_PI_8 + PI, FRAC_PI_8 - PI, 0.0).unwrap();
        assert!(wrapped.matches(&s));
    }

    #[test]
    fn chsh_values() {
        let a = ChshAngles::standard();
        assert!((chsh_closed_form(1.0, 0.0, &a).unwrap() - 2.0 * SQRT_2).abs() < 1e-12);
        assert!((chsh_closed_form(0.909, 0.0, &a).unwrap() - 2.571).abs() < 0.001);
        assert!((chsh_closed_form(0.5, 0.0, &a).unwrap() - SQRT_2).abs() < 1e-12);
        assert!(violation_significance(2.57, 0.06) > 9.0);
    }

    #[test]
    fn h_v_anticorrelation() {
        assert_relative_eq!(correlation(1.0, 0.0, 0.0, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn accidentals_examples() {
        assert_relative_eq!(accidentals(1e4, 1e4, 4.0), 0.4, epsilon = 1e-15);
        assert_eq!(accidentals(0.0, 1e4, 4.0), 0.0);
        assert_relative_eq!(accidentals(1e4, 1e4, 8.0), 2.0 * accidentals(1e4, 1e4, 4.0));
    }

    #[test]
    fn grid_search_finds_tsirelson_at_standard_angles() {
        // a₁ fixed to remove the global rotation; 1° grid over the rest
        let deg = PI / 180.0;
        let a1 = FRAC_PI_4;
        let e: Vec<f64> = (0..180).map(|i| -(2.0 * (a1 + i as f64 * deg)).cos()).collect();
        let mut best = f64::NEG_INFINITY;
        for a2 in 0..180 {
            for b1 in 0..180 {
                for b2 in 0..180 {
                    let s = e[b1] + e[b2] - (2.0 * (a2 as f64 * deg + b1 as f64 * deg)).cos()
                        + (2.0 * (a2 as f64 * deg + b2 as f64 * deg)).cos();
                    best = best.max(s);
                }
            }
        }
        let standard = chsh_closed_form(1.0, 0.0, &ChshAngles::standard()).unwrap();
        assert!(best <= standard + 1e-12);
        assert!(standard - best < 2e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pairings_sum_to_one(v in 0.0..=1.0f64, phase in -7.0..7.0f64, ts in -4.0..4.0f64, ti in -4.0..4.0f64, sbc in -3.0..3.0f64) {
            let s = AnalyzerSetting::new(ts, ti, sbc).unwrap();
            let p = pairing_probabilities(v, phase, &s).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (-1e-15..=1.0).contains(&x)));
        }

        #[test]
        fn correlation_from_probabilities(v in 0.0..=1.0f64, phi in -7.0..7.0f64, a in -4.0..4.0f64, b in -4.0..4.0f64) {
            let s = AnalyzerSetting::from_analysis_angles(a, b, 0.0).unwrap();
            let p = pairing_probabilities(v, phi, &s).unwrap();
            let e: f64 = p.iter().zip(PAIRING_PARITY).map(|(p, s)| p * s).sum();
            prop_assert!((e - correlation(v, phi, a, b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn werner_oracle_agrees(v in 0.0..=1.0f64, phi in -7.0..7.0f64, a in -4.0..4.0f64, b in -4.0..4.0f64) {
            let p = coincidence_probability_at(v, phi, a, b).unwrap();
            prop_assert!((p - qpm_oracle::werner_coincidence(v, phi, a, b)).abs() < 1e-12);
            let e = correlation(v, phi, a, b).unwrap();
            prop_assert!((e - qpm_oracle::werner_correlation(v, phi, a, b)).abs() < 1e-12);
        }

        #[test]
        fn s_invariant_under_counter_rotation(v in 0.0..=1.0f64, d in -4.0..4.0f64) {
            let std = ChshAngles::standard();
            let rotated = ChshAngles {
                a_rad: std.a_rad.map(|a| a + d),
                b_rad: std.b_rad.map(|b| b - d),
            };
            let s0 = chsh_closed_form(v, 0.0, &std).unwrap();
            prop_assert!((chsh_closed_form(v, 0.0, &rotated).unwrap() - s0).abs() < 1e-12);
            for (a, b) in std.pairs() {
                prop_assert!((correlation(v, 0.0, a + d, b - d).unwrap() - correlation(v, 0.0, a, b).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn s_bounded_by_tsirelson(v in 0.0..=1.0f64, phi in -7.0..7.0f64, a1 in -4.0..4.0f64, a2 in -4.0..4.0f64, b1 in -4.0..4.0f64, b2 in -4.0..4.0f64) {
            let s = chsh_closed_form(v, phi, &ChshAngles { a_rad: [a1, a2], b_rad: [b1, b2] }).unwrap();
            prop_assert!(s.abs() <= 2.0 * SQRT_2 + 1e-12);
        }
    }
}
