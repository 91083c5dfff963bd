//! Synthetic corpus: harmonic bona fide clips and spoofed counterparts
//! carrying deterministic synthesis artifacts. The artifacts are temporal
//! and spectral structure (a gated ultrasonic-ish tone, a comb notch, frame
//! gain discontinuities) so they survive per-bin feature normalization, and
//! a raw-waveform band-energy oracle separates the classes by construction.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::Condition;
use crate::eval::compute_eer;
use crate::features::{
    frame_and_window, power_spectrum, AudioClip, Duration, Label, HOP, NFFT, SAMPLE_RATE, WIN,
};
use crate::{mix64, Error, Result};

/// Spoof tone sits above every bona fide partial and below Nyquist.
pub const SPOOF_TONE_HZ: f64 = 6731.0;
/// Bona fide partials stop here, leaving the oracle band clean.
pub const BONA_MAX_HARMONIC_HZ: f64 = 6200.0;
/// Raw-spectrum band inspected by the oracle detector.
pub const ORACLE_BAND_HZ: (f64, f64) = (6500.0, 7000.0);

const COMB_DELAY: usize = 9;
const COMB_GAIN: f64 = 0.55;
const GAIN_STEPS: [f64; 3] = [0.82, 1.0, 1.18];
const GAIN_FRAME: usize = 160; // 10 ms at 16 kHz
const TONE_AMP: f64 = 0.08;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub durations: Vec<Duration>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub id: String,
    pub clip: AudioClip,
}

fn clip_rng(duration: Duration, label: Label, index: usize, seed: u64) -> ChaCha8Rng {
    let dur_code = Duration::ALL.iter().position(|&d| d == duration).unwrap() as u64;
    let stream = mix64(dur_code << 32 | (label.class() as u64) << 24, index as u64);
    ChaCha8Rng::seed_from_u64(mix64(seed, stream))
}

/// Deterministic clip synthesis: (duration, label, index, seed) fixes every
/// sample.
pub fn make_clip(duration: Duration, label: Label, index: usize, seed: u64) -> AudioClip {
    let mut rng = clip_rng(duration, label, index, seed);
    let n = duration.samples();
    let sr = SAMPLE_RATE as f64;

    // harmonic voice with a soft envelope and background noise
    let f0 = 110.0 + 190.0 * rng.random::<f64>();
    let n_partials = (BONA_MAX_HARMONIC_HZ / f0).floor() as usize;
    let partials: Vec<(f64, f64, f64)> = (1..=n_partials)
        .map(|h| {
            let amp = (0.9 + 0.2 * rng.random::<f64>()) / (h as f64).powf(1.1);
            (h as f64 * f0, amp, rng.random::<f64>() * 2.0 * PI)
        })
        .collect();
    let am_hz = 0.5 + 1.5 * rng.random::<f64>();
    let am_phase = rng.random::<f64>() * 2.0 * PI;
    let edge = (0.02 * sr) as usize; // 20 ms raised-cosine attack and release
    let mut lp = 0.0;
    let mut x = vec![0.0; n];
    for (i, slot) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let mut v = 0.0;
        for &(hz, amp, phase) in &partials {
            v += amp * (2.0 * PI * hz * t + phase).sin();
        }
        let mut env = 1.0 - 0.15 * (0.5 + 0.5 * (2.0 * PI * am_hz * t + am_phase).sin());
        if i < edge {
            env *= 0.5 * (1.0 - (PI * i as f64 / edge as f64).cos());
        }
        if i + edge > n {
            env *= 0.5 * (1.0 - (PI * (n - i) as f64 / edge as f64).cos());
        }
        let w = rng.random_range(-1.0..1.0);
        lp = 0.95 * lp + 0.05 * w;
        *slot = env * v + 0.015 * w + 0.4 * lp;
    }

    if label == Label::Spoof {
        // comb notch
        for i in (COMB_DELAY..n).rev() {
            x[i] -= COMB_GAIN * x[i - COMB_DELAY];
        }
        // per-frame gain discontinuities
        for frame in x.chunks_mut(GAIN_FRAME) {
            let gain = GAIN_STEPS[rng.random_range(0..GAIN_STEPS.len())];
            frame.iter_mut().for_each(|v| *v *= gain);
        }
        // square-gated tone
        let gate_hz = 3.0 + 5.0 * rng.random::<f64>();
        let tone_phase = rng.random::<f64>() * 2.0 * PI;
        for (i, slot) in x.iter_mut().enumerate() {
            let t = i as f64 / sr;
            if (t * gate_hz).fract() < 0.5 {
                *slot += TONE_AMP * (2.0 * PI * SPOOF_TONE_HZ * t + tone_phase).sin();
            }
        }
    }

    let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    let target = 0.75 + 0.15 * rng.random::<f64>();
    let scale = target / peak;
    x.iter_mut().for_each(|v| *v *= scale);

    AudioClip::new(x, duration, label, Condition::C0).expect("synthesized clip is in range")
}

pub fn clip_id(duration: Duration, label: Label, index: usize) -> String {
    format!("{duration}s_{label}_{index:04}")
}

pub fn make_corpus(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    if spec.n_per_class == 0 {
        return Err(Error::config("corpus needs at least one clip per class"));
    }
    if spec.durations.is_empty() {
        return Err(Error::config("corpus needs at least one duration"));
    }
    let mut out = Vec::with_capacity(spec.durations.len() * spec.n_per_class * 2);
    for &duration in &spec.durations {
        for label in [Label::BonaFide, Label::Spoof] {
            for index in 0..spec.n_per_class {
                out.push(SynthClip {
                    id: clip_id(duration, label, index),
                    clip: make_clip(duration, label, index, spec.seed),
                });
            }
        }
    }
    Ok(out)
}

/// Fraction of raw spectral energy in the oracle band, in decibels. Operates
/// on the waveform, independent of the learned features.
pub fn band_energy_score(clip: &AudioClip) -> Result<f64> {
    let frames = frame_and_window(&clip.samples, WIN, HOP)?;
    let spec = power_spectrum(&frames, NFFT)?;
    let hz_per_bin = SAMPLE_RATE as f64 / NFFT as f64;
    let lo = (ORACLE_BAND_HZ.0 / hz_per_bin).ceil() as usize;
    let hi = (ORACLE_BAND_HZ.1 / hz_per_bin).floor() as usize;
    let mut band = 0.0;
    let mut total = 0.0;
    for row in &spec {
        total += row.iter().sum::<f64>();
        band += row[lo..=hi].iter().sum::<f64>();
    }
    Ok(10.0 * ((band + 1e-30) / (total + 1e-30)).log10())
}

/// Equal error rate of the band-energy oracle over a corpus.
pub fn oracle_eer(clips: &[SynthClip]) -> Result<f64> {
    let mut scores = Vec::with_capacity(clips.len());
    for c in clips {
        scores.push((band_energy_score(&c.clip)?, c.clip.label));
    }
    Ok(compute_eer(&scores)?.0)
}
