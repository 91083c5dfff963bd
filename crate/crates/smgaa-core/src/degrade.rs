//! Communication-degradation simulator: six signal-level codec proxies and a
//! seeded 20 ms packet-loss model, composed into evaluation conditions C0
//! (clean) through C5 (heaviest loss). Every transform preserves length and
//! sample rate and is deterministic under (input, seed).

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::AudioClip;
use crate::{Error, Result};

/// Packet duration used by the frame-drop loss model.
pub const PACKET_MS: usize = 20;
/// Loss rates for C1..C5; C0 is clean by definition.
pub const LOSS_RATES: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];
pub const N_CODECS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    C0,
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl Condition {
    pub const ALL: [Condition; 6] =
        [Condition::C0, Condition::C1, Condition::C2, Condition::C3, Condition::C4, Condition::C5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Condition::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::config(format!("condition index {i} out of range 0..=5")))
    }

    /// Packet-loss rate of the standard condition ladder: (k−1)·5% for Ck.
    pub fn loss_rate(self) -> f64 {
        match self {
            Condition::C0 => 0.0,
            c => LOSS_RATES[c.index() - 1],
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.index())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c0" | "C0" => Ok(Condition::C0),
            "c1" | "C1" => Ok(Condition::C1),
            "c2" | "C2" => Ok(Condition::C2),
            "c3" | "C3" => Ok(Condition::C3),
            "c4" | "C4" => Ok(Condition::C4),
            "c5" | "C5" => Ok(Condition::C5),
            other => Err(Error::data(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DegradationSpec {
    pub condition: Condition,
    /// 1..=6; None only for C0.
    pub codec_id: Option<u8>,
    pub loss_rate: f64,
    pub seed: u64,
}

impl DegradationSpec {
    /// Standard ladder: C0 clean; Ck = codec + (k−1)·5% loss.
    pub fn standard(condition: Condition, codec_id: u8, seed: u64) -> Result<Self> {
        let spec = match condition {
            Condition::C0 => {
                DegradationSpec { condition, codec_id: None, loss_rate: 0.0, seed }
            }
            c => DegradationSpec {
                condition: c,
                codec_id: Some(codec_id),
                loss_rate: c.loss_rate(),
                seed,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(Error::config(format!("loss rate {} outside [0, 1)", self.loss_rate)));
        }
        match (self.condition, self.codec_id) {
            (Condition::C0, None) => {
                if self.loss_rate != 0.0 {
                    return Err(Error::config("C0 must have zero loss rate"));
                }
            }
            (Condition::C0, Some(_)) => {
                return Err(Error::config("C0 is clean and takes no codec"));
            }
            (_, None) => {
                return Err(Error::config(format!("{} requires a codec", self.condition)));
            }
            (_, Some(id)) if !(1..=N_CODECS).contains(&id) => {
                return Err(Error::config(format!("unknown codec id {id}, expected 1..=6")));
            }
            _ => {}
        }
        Ok(())
    }
}

// ── codec proxies ───────────────────────────────────────────────────────

const MU: f64 = 255.0;
const A_LAW: f64 = 87.6;

fn mu_law_roundtrip(x: f64) -> f64 {
    let y = x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln();
    let q = (y * 127.0).round() / 127.0;
    q.signum() * ((1.0 + MU).powf(q.abs()) - 1.0) / MU
}

fn a_law_roundtrip(x: f64) -> f64 {
    let denom = 1.0 + A_LAW.ln();
    let ax = A_LAW * x.abs();
    let y = x.signum() * if ax < 1.0 { ax / denom } else { (1.0 + ax.ln()) / denom };
    let q = (y * 127.0).round() / 127.0;
    let qa = q.abs();
    let mag = if qa < 1.0 / denom { qa * denom / A_LAW } else { (qa * denom - 1.0).exp() / A_LAW };
    q.signum() * mag
}

/// Drop to 8 kHz by decimation, return by linear interpolation.
fn resample_8k_roundtrip(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = n.div_ceil(2);
    let down: Vec<f64> = (0..m).map(|j| x[2 * j]).collect();
    let mut out = vec![0.0; n];
    for j in 0..m {
        out[2 * j] = down[j];
        if 2 * j + 1 < n {
            out[2 * j + 1] =
                if j + 1 < m { 0.5 * (down[j] + down[j + 1]) } else { down[j] };
        }
    }
    out
}

fn requantize_6bit(x: f64) -> f64 {
    // 64 uniform levels on [-1, 1]: error is at most 1/63 per sample
    ((x + 1.0) * 31.5).round() / 31.5 - 1.0
}

/// 63-tap windowed-sinc low-pass at 4 kHz, zero-phase by compensating the
/// 31-sample group delay. Ringing is clamped back into [-1, 1].
fn lowpass_4k(x: &[f64]) -> Vec<f64> {
    const TAPS: usize = 63;
    const DELAY: usize = (TAPS - 1) / 2;
    let fc = 4000.0 / crate::features::SAMPLE_RATE as f64; // cycles per sample
    let mut h = [0.0; TAPS];
    for (i, slot) in h.iter_mut().enumerate() {
        let u = 2.0 * fc * (i as f64 - DELAY as f64);
        let sinc = if u == 0.0 { 1.0 } else { (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u) };
        let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (TAPS - 1) as f64).cos();
        *slot = 2.0 * fc * sinc * w;
    }
    let gain: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= gain);
    let n = x.len();
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &hk) in h.iter().enumerate() {
            let src = i as isize + DELAY as isize - k as isize;
            if (0..n as isize).contains(&src) {
                acc += hk * x[src as usize];
            }
        }
        *slot = acc.clamp(-1.0, 1.0);
    }
    out
}

/// Apply one codec proxy to raw samples; length and range are preserved.
pub fn apply_codec_samples(samples: &[f64], codec_id: u8) -> Result<Vec<f64>> {
    match codec_id {
        1 => Ok(samples.iter().map(|&v| mu_law_roundtrip(v)).collect()),
        2 => Ok(samples.iter().map(|&v| a_law_roundtrip(v)).collect()),
        3 => Ok(resample_8k_roundtrip(samples)),
        4 => Ok(samples.iter().map(|&v| requantize_6bit(v)).collect()),
        5 => Ok(lowpass_4k(samples)),
        6 => {
            let companded: Vec<f64> = samples.iter().map(|&v| mu_law_roundtrip(v)).collect();
            Ok(resample_8k_roundtrip(&companded))
        }
        other => Err(Error::config(format!("unknown codec id {other}, expected 1..=6"))),
    }
}

pub fn apply_codec(clip: &AudioClip, codec_id: u8) -> Result<AudioClip> {
    let samples = apply_codec_samples(&clip.samples, codec_id)?;
    AudioClip::new(samples, clip.duration, clip.label, clip.condition)
}

// ── packet loss ─────────────────────────────────────────────────────────

/// Zero each `frame_ms` frame independently with probability `loss_rate`,
/// driven by a ChaCha stream seeded with `seed`.
pub fn apply_packet_loss_samples(
    samples: &[f64],
    loss_rate: f64,
    frame_ms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&loss_rate) {
        return Err(Error::config(format!("loss rate {loss_rate} outside [0, 1)")));
    }
    if frame_ms == 0 {
        return Err(Error::config("packet frame must be at least 1 ms"));
    }
    let frame_len = frame_ms * crate::features::SAMPLE_RATE as usize / 1000;
    let mut out = samples.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for frame in out.chunks_mut(frame_len) {
        if rng.random::<f64>() < loss_rate {
            frame.fill(0.0);
        }
    }
    Ok(out)
}

pub fn apply_packet_loss(
    clip: &AudioClip,
    loss_rate: f64,
    frame_ms: usize,
    seed: u64,
) -> Result<AudioClip> {
    let samples = apply_packet_loss_samples(&clip.samples, loss_rate, frame_ms, seed)?;
    AudioClip::new(samples, clip.duration, clip.label, clip.condition)
}

// ── condition pipeline ──────────────────────────────────────────────────

/// C0 passes through untouched; Ck applies the requested codec then packet
/// loss at the requested rate. The output clip carries the condition tag.
pub fn condition_pipeline(clip: &AudioClip, spec: &DegradationSpec) -> Result<AudioClip> {
    spec.validate()?;
    let mut out = match spec.codec_id {
        None => clip.clone(),
        Some(id) => {
            let coded = apply_codec(clip, id)?;
            apply_packet_loss(&coded, spec.loss_rate, PACKET_MS, spec.seed)?
        }
    };
    out.condition = spec.condition;
    Ok(out)
}

/// Stable per-clip codec assignment: hashes (clip id, seed) onto 1..=6 so a
/// clip keeps its codec across conditions and runs.
pub fn codec_for_clip(clip_id: &str, seed: u64) -> u8 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in clip_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
        h ^= h >> 29;
    }
    (h % N_CODECS as u64) as u8 + 1
}
