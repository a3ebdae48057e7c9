use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{pairing_probabilities, AnalyzerSetting, CountRecord};
use crate::error::{ensure_non_negative, ensure_positive, ensure_range, Result};

/// Pair source seen by the analyzers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    pub pair_rate_per_s: f64,
    pub visibility: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("pair_rate_per_s", self.pair_rate_per_s)?;
        ensure_range("visibility", self.visibility, 0.0, 1.0)
    }
}

/// Channels in order: signal +, signal −, idler +, idler −.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Overall detection probability per channel, transmission included.
    pub efficiency: [f64; 4],
    pub dark_rate_per_s: [f64; 4],
    pub window_ns: f64,
}

impl DetectorModel {
    pub fn uniform(efficiency: f64, dark_rate_per_s: f64, window_ns: f64) -> Self {
        Self {
            efficiency: [efficiency; 4],
            dark_rate_per_s: [dark_rate_per_s; 4],
            window_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &e in &self.efficiency {
            ensure_range("efficiency", e, 0.0, 1.0)?;
        }
        for &d in &self.dark_rate_per_s {
            ensure_non_negative("dark_rate_per_s", d)?;
        }
        ensure_positive("window_ns", self.window_ns)
    }
}

/// SplitMix64 mix of a base seed and an index; used to give every setting
/// or run its own independent stream.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

/// Expected counts at one setting, same layout as [`CountRecord`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedCounts {
    pub true_coincidences: [f64; 4],
    pub singles_signal: [f64; 2],
    pub singles_idler: [f64; 2],
}

pub fn expected_counts(source: &SourceModel, detectors: &DetectorModel, setting: &AnalyzerSetting, duration_s: f64) -> Result<ExpectedCounts> {
    let p = pairing_probabilities(source.visibility, source.phase_rad, setting)?;
    let n = source.pair_rate_per_s * duration_s;
    let eta = detectors.efficiency;
    let mut both = [0.0; 4];
    let mut ss = [0.0; 2];
    let mut si = [0.0; 2];
    for j in 0..2 {
        for k in 0..2 {
            let pk = n * p[2 * j + k];
            both[2 * j + k] = pk * eta[j] * eta[2 + k];
            ss[j] += pk * eta[j];
            si[k] += pk * eta[2 + k];
        }
    }
    for j in 0..2 {
        ss[j] += detectors.dark_rate_per_s[j] * duration_s;
        si[j] += detectors.dark_rate_per_s[2 + j] * duration_s;
    }
    Ok(ExpectedCounts {
        true_coincidences: both,
        singles_signal: ss,
        singles_idler: si,
    })
}

/// Counts at one setting drawn from `rng`.
///
/// Each emitted pair lands in one splitter pairing with the Born-rule
/// probability and each photon is detected independently, so the
/// both-detected, signal-only and idler-only events of every pairing are
/// independent Poisson variables. Dark counts add to the singles, and
/// accidental coincidences are Poisson with mean S_j·S_k·τ/T from the
/// realized singles.
pub fn simulate_setting<R: Rng>(
    rng: &mut R,
    source: &SourceModel,
    detectors: &DetectorModel,
    setting: &AnalyzerSetting,
    duration_s: f64,
) -> Result<CountRecord> {
    let p = pairing_probabilities(source.visibility, source.phase_rad, setting)?;
    let n = source.pair_rate_per_s * duration_s;
    let eta = detectors.efficiency;
    let mut both = [0u64; 4];
    let mut ss = [0u64; 2];
    let mut si = [0u64; 2];
    for j in 0..2 {
        for k in 0..2 {
            let pk = n * p[2 * j + k];
            let (es, ei) = (eta[j], eta[2 + k]);
            let b = poisson(rng, pk * es * ei);
            both[2 * j + k] = b;
            ss[j] += b + poisson(rng, pk * es * (1.0 - ei));
            si[k] += b + poisson(rng, pk * (1.0 - es) * ei);
        }
    }
    for j in 0..2 {
        ss[j] += poisson(rng, detectors.dark_rate_per_s[j] * duration_s);
        si[j] += poisson(rng, detectors.dark_rate_per_s[2 + j] * duration_s);
    }
    let w = detectors.window_ns * 1e-9;
    let mut coincidences = both;
    for j in 0..2 {
        for k in 0..2 {
            coincidences[2 * j + k] += poisson(rng, ss[j] as f64 * si[k] as f64 * w / duration_s);
        }
    }
    Ok(CountRecord {
        setting: *setting,
        coincidences,
        singles_signal: ss,
        singles_idler: si,
        duration_s,
        window_ns: detectors.window_ns,
    })
}

/// One [`CountRecord`] per setting. Setting `k` uses the stream
/// `sub_seed(seed, k)`, so results do not depend on evaluation order.
pub fn simulate_experiment(
    source: &SourceModel,
    detectors: &DetectorModel,
    settings: &[AnalyzerSetting],
    duration_s: f64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    source.validate()?;
    detectors.validate()?;
    ensure_positive("duration_s", duration_s)?;
    settings
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, k as u64));
            simulate_setting(&mut rng, source, detectors, s, duration_s)
        })
        .collect()
}

/// Plate angles θ = kπ/(2n), k = 0..n, covering one full fringe period of
/// the signal plate with the idler plate fixed.
pub fn fringe_settings(theta_i_rad: f64, phi_sbc_rad: f64, samples: usize) -> Result<Vec<AnalyzerSetting>> {
    (0..samples)
        .map(|k| AnalyzerSetting::new(k as f64 * std::f64::consts::FRAC_PI_2 / samples as f64, theta_i_rad, phi_sbc_rad))
        .collect()
}
