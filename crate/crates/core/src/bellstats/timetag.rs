//! Raw detection streams: a little-endian binary record format and the
//! windowing that turns a stream into [`CountRecord`]s.
//!
//! File layout: 8-byte magic `QPMTTAG\0`, u32 version, u32 reserved (zero),
//! then 9-byte records (u8 channel, u64 timestamp in ps).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

use super::simulate::{poisson, sub_seed, DetectorModel, SourceModel};
use super::{pairing_probabilities, AnalyzerSetting, CountRecord};
use crate::error::{ensure_positive, Error, Result};

pub const TIMETAG_MAGIC: [u8; 8] = *b"QPMTTAG\0";
pub const TIMETAG_VERSION: u32 = 1;

/// Detector channels: signal +, signal −, idler +, idler −.
pub const CHANNEL_SIGNAL_PLUS: u8 = 0;
pub const CHANNEL_SIGNAL_MINUS: u8 = 1;
pub const CHANNEL_IDLER_PLUS: u8 = 2;
pub const CHANNEL_IDLER_MINUS: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeTag {
    pub channel: u8,
    pub time_ps: u64,
}

pub fn write_time_tags<W: Write>(tags: &[TimeTag], mut w: W) -> Result<()> {
    w.write_all(&TIMETAG_MAGIC)?;
    w.write_all(&TIMETAG_VERSION.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for t in tags {
        w.write_all(&[t.channel])?;
        w.write_all(&t.time_ps.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_time_tags<R: Read>(mut r: R) -> Result<Vec<TimeTag>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("time-tag stream shorter than its header".into()))?;
    if header[..8] != TIMETAG_MAGIC {
        return Err(Error::Format("bad time-tag magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != TIMETAG_VERSION {
        return Err(Error::Format(format!("unsupported time-tag version {version}")));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 9 != 0 {
        return Err(Error::Format(format!("truncated record: {} trailing bytes", body.len() % 9)));
    }
    body.chunks_exact(9)
        .map(|c| {
            let channel = c[0];
            if channel > CHANNEL_IDLER_MINUS {
                return Err(Error::Format(format!("unknown channel {channel}")));
            }
            Ok(TimeTag {
                channel,
                time_ps: u64::from_le_bytes(c[1..9].try_into().unwrap()),
            })
        })
        .collect()
}

/// Counts singles per channel and signal–idler coincidences with
/// |t_s − t_i| ≤ window/2. Every signal event pairs with each idler event
/// inside its window. Tags need not be sorted.
pub fn count_coincidences(tags: &[TimeTag], setting: AnalyzerSetting, duration_s: f64, window_ns: f64) -> Result<CountRecord> {
    ensure_positive("duration_s", duration_s)?;
    ensure_positive("window_ns", window_ns)?;
    let half = (window_ns * 1e3 * 0.5).round() as u64;
    let mut signal = Vec::new();
    let mut idler = Vec::new();
    let mut singles = [0u64; 4];
    for t in tags {
        if t.channel > CHANNEL_IDLER_MINUS {
            return Err(Error::Format(format!("unknown channel {}", t.channel)));
        }
        singles[t.channel as usize] += 1;
        if t.channel <= CHANNEL_SIGNAL_MINUS {
            signal.push(*t);
        } else {
            idler.push(*t);
        }
    }
    signal.sort_by_key(|t| t.time_ps);
    idler.sort_by_key(|t| t.time_ps);
    let mut coincidences = [0u64; 4];
    let mut start = 0;
    for s in &signal {
        let lo = s.time_ps.saturating_sub(half);
        while start < idler.len() && idler[start].time_ps < lo {
            start += 1;
        }
        for i in &idler[start..] {
            if i.time_ps > s.time_ps + half {
                break;
            }
            let j = s.channel as usize;
            let k = (i.channel - CHANNEL_IDLER_PLUS) as usize;
            coincidences[2 * j + k] += 1;
        }
    }
    Ok(CountRecord {
        setting,
        coincidences,
        singles_signal: [singles[0], singles[1]],
        singles_idler: [singles[2], singles[3]],
        duration_s,
        window_ns,
    })
}

/// Synthetic stream at one setting: pair emission times uniform over the
/// run, Born-rule pairing, independent detection per photon, and uniform
/// dark counts. Coincidences between unrelated events appear on their own
/// when the stream is windowed.
pub fn simulate_time_tags(
    source: &SourceModel,
    detectors: &DetectorModel,
    setting: &AnalyzerSetting,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<TimeTag>> {
    source.validate()?;
    detectors.validate()?;
    ensure_positive("duration_s", duration_s)?;
    let p = pairing_probabilities(source.visibility, source.phase_rad, setting)?;
    let span_ps = (duration_s * 1e12) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
    let mut tags = Vec::new();
    let pairs = poisson(&mut rng, source.pair_rate_per_s * duration_s);
    let cumulative = [p[0], p[0] + p[1], p[0] + p[1] + p[2]];
    for _ in 0..pairs {
        let t = rng.gen_range(0..span_ps.max(1));
        let u: f64 = rng.gen();
        let pairing = cumulative.iter().position(|&c| u < c).unwrap_or(3);
        let (j, k) = (pairing / 2, pairing % 2);
        if rng.gen::<f64>() < detectors.efficiency[j] {
            tags.push(TimeTag { channel: j as u8, time_ps: t });
        }
        if rng.gen::<f64>() < detectors.efficiency[2 + k] {
            tags.push(TimeTag {
                channel: (2 + k) as u8,
                time_ps: t,
            });
        }
    }
    for ch in 0..4u8 {
        let darks = poisson(&mut rng, detectors.dark_rate_per_s[ch as usize] * duration_s);
        for _ in 0..darks {
            tags.push(TimeTag {
                channel: ch,
                time_ps: rng.gen_range(0..span_ps.max(1)),
            });
        }
    }
    tags.sort_by_key(|t| (t.time_ps, t.channel));
    Ok(tags)
}
