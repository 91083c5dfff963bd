//! Raw audio to B×1×60×T cepstral feature maps.
//!
//! Fixed frontend: 16 kHz input, centered frames of 1024 samples with hop 512
//! and reflect padding, periodic Hann window, 1024-point FFT, 70 triangular
//! filters (mel, linear, or geometric spacing), log with a 1e-10 floor,
//! orthonormal DCT-II keeping 60 coefficients, then per-bin mean/variance
//! normalization over time. Frame count is ceil(len/hop), so the four clip
//! durations map to T = 16, 32, 47, 63.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::degrade::Condition;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WIN: usize = 1024;
pub const HOP: usize = 512;
pub const NFFT: usize = 1024;
pub const N_FILTERS: usize = 70;
pub const N_CEPS: usize = 60;
pub const BAND_HIGH_HZ: f64 = 8_000.0;
/// Geometric ladders cannot start at 0 Hz, and below this the lowest
/// triangle would be narrower than one FFT bin.
pub const GEOMETRIC_FMIN_HZ: f64 = 150.0;
const LOG_FLOOR: f64 = 1e-10;

// ── domain types ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Duration {
    Half,
    One,
    OneAndHalf,
    Two,
}

impl Duration {
    pub const ALL: [Duration; 4] = [Duration::Half, Duration::One, Duration::OneAndHalf, Duration::Two];

    pub fn secs(self) -> f64 {
        match self {
            Duration::Half => 0.5,
            Duration::One => 1.0,
            Duration::OneAndHalf => 1.5,
            Duration::Two => 2.0,
        }
    }

    pub fn samples(self) -> usize {
        (self.secs() * SAMPLE_RATE as f64).round() as usize
    }

    /// Frame count at hop 512: ceil(samples/512) = 16, 32, 47, 63.
    pub fn frames(self) -> usize {
        self.samples().div_ceil(HOP)
    }

    pub fn from_secs(secs: f64) -> Result<Self> {
        Duration::ALL
            .into_iter()
            .find(|d| (d.secs() - secs).abs() < 1e-9)
            .ok_or_else(|| Error::config(format!("unsupported duration {secs}s, expected one of 0.5/1.0/1.5/2.0")))
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.secs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    BonaFide,
    Spoof,
}

impl Label {
    /// Class index used by the network: bona fide 0, spoof 1.
    pub fn class(self) -> usize {
        match self {
            Label::BonaFide => 0,
            Label::Spoof => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::BonaFide => "bona_fide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bona_fide" => Ok(Label::BonaFide),
            "spoof" => Ok(Label::Spoof),
            other => Err(Error::data(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    Lfcc,
    Cqcc,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Cqcc => "cqcc",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "lfcc" => Ok(FeatureKind::Lfcc),
            "cqcc" => Ok(FeatureKind::Cqcc),
            other => Err(Error::data(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub duration: Duration,
    pub label: Label,
    pub condition: Condition,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        duration: Duration,
        label: Label,
        condition: Condition,
    ) -> Result<Self> {
        if samples.len() != duration.samples() {
            return Err(Error::data(format!(
                "clip holds {} samples but a {duration}s clip at {SAMPLE_RATE} Hz has {}",
                samples.len(),
                duration.samples()
            )));
        }
        if samples.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::data("clip samples outside [-1, 1]"));
        }
        Ok(AudioClip { samples, sample_rate: SAMPLE_RATE, duration, label, condition })
    }
}

#[derive(Debug, Clone)]
pub struct FeatureMap {
    /// Shape [1, 1, 60, T].
    pub tensor: Tensor,
    pub kind: FeatureKind,
    pub duration: Duration,
}

// ── WAV I/O ─────────────────────────────────────────────────────────────

/// Accepts only 16-bit PCM mono at 16 kHz; samples scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.sample_rate != SAMPLE_RATE
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::data(format!(
            "{}: expected 16-bit PCM mono at 16 kHz, got {} ch / {} Hz / {}-bit {:?}",
            path.display(),
            spec.channels,
            spec.sample_rate,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| Error::data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes round(x·32768) clamped to i16, so decode followed by encode is
/// byte-idempotent.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    for &v in samples {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

// ── STFT stages ─────────────────────────────────────────────────────────

/// Centered frames with reflect padding of win/2 per side and a periodic
/// Hann window; frame count is ceil(len/hop).
pub fn frame_and_window(samples: &[f64], win: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if hop == 0 || win < hop {
        return Err(Error::config(format!("need win >= hop >= 1, got win {win} hop {hop}")));
    }
    if samples.len() < 2 {
        return Err(Error::data("clip shorter than 2 samples"));
    }
    let half = win / 2;
    if samples.len() <= half {
        return Err(Error::data(format!(
            "clip of {} samples is too short to reflect-pad by {half}",
            samples.len()
        )));
    }
    let n = samples.len();
    let mut padded = Vec::with_capacity(n + 2 * half);
    for i in (1..=half).rev() {
        padded.push(samples[i]);
    }
    padded.extend_from_slice(samples);
    for i in 0..half {
        padded.push(samples[n - 2 - i]);
    }
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let n_frames = n.div_ceil(hop);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        let frame: Vec<f64> =
            padded[start..start + win].iter().zip(&window).map(|(&s, &w)| s * w).collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// |DFT|² of each frame over the one-sided spectrum [0, nfft/2].
pub fn power_spectrum(frames: &[Vec<f64>], nfft: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(f) = frames.iter().find(|f| f.len() > nfft) {
        return Err(Error::config(format!(
            "nfft {nfft} smaller than frame length {}",
            f.len()
        )));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut out = Vec::with_capacity(frames.len());
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for frame in frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (slot, &v) in buf.iter_mut().zip(frame) {
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

// ── filterbank ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterScale {
    Mel,
    Linear,
    Geometric,
}

impl From<FeatureKind> for FilterScale {
    fn from(kind: FeatureKind) -> Self {
        match kind {
            FeatureKind::Mfcc => FilterScale::Mel,
            FeatureKind::Lfcc => FilterScale::Linear,
            FeatureKind::Cqcc => FilterScale::Geometric,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
pub struct Filterbank {
    pub scale: FilterScale,
    /// n_filters + 2 edge frequencies in Hz; filter i spans edges [i, i+2]
    /// with its peak at edge i+1.
    edges: Vec<f64>,
    /// Per filter: first FFT bin with nonzero weight and the L1-normalized
    /// weights from there.
    filters: Vec<(usize, Vec<f64>)>,
}

impl Filterbank {
    pub fn new(scale: FilterScale, n_filters: usize, sr: u32, nfft: usize) -> Result<Self> {
        if n_filters < 2 {
            return Err(Error::config(format!("need at least 2 filters, got {n_filters}")));
        }
        let n_edges = n_filters + 2;
        let edges: Vec<f64> = match scale {
            FilterScale::Linear => (0..n_edges)
                .map(|i| BAND_HIGH_HZ * i as f64 / (n_edges - 1) as f64)
                .collect(),
            FilterScale::Mel => {
                let top = hz_to_mel(BAND_HIGH_HZ);
                (0..n_edges).map(|i| mel_to_hz(top * i as f64 / (n_edges - 1) as f64)).collect()
            }
            FilterScale::Geometric => {
                let ratio = (BAND_HIGH_HZ / GEOMETRIC_FMIN_HZ).powf(1.0 / (n_edges - 1) as f64);
                (0..n_edges).map(|i| GEOMETRIC_FMIN_HZ * ratio.powi(i as i32)).collect()
            }
        };
        let bin_hz = sr as f64 / nfft as f64;
        let n_bins = nfft / 2 + 1;
        let mut filters = Vec::with_capacity(n_filters);
        for i in 0..n_filters {
            let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            let Some(start) = start else {
                return Err(Error::config(format!(
                    "filter {i} ({lo:.1}-{hi:.1} Hz) covers no FFT bin: {n_filters} filters exceed \
                     the {bin_hz:.2} Hz FFT resolution"
                )));
            };
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            filters.push((start, weights));
        }
        Ok(Filterbank { scale, edges, filters })
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    /// Peak frequencies in Hz, strictly increasing.
    pub fn centers(&self) -> Vec<f64> {
        self.edges[1..=self.filters.len()].to_vec()
    }

    pub fn band(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }

    /// True if FFT bin k contributes to at least one filter.
    pub fn covers_bin(&self, k: usize) -> bool {
        self.filters.iter().any(|(start, w)| k >= *start && k < start + w.len())
    }

    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(start, w)| {
                w.iter().zip(&spectrum[*start..]).map(|(&wi, &si)| wi * si).sum()
            })
            .collect()
    }
}

// ── cepstra ─────────────────────────────────────────────────────────────

/// Log (floored at 1e-10) then orthonormal DCT-II, keeping `n_ceps`
/// coefficients per frame.
pub fn cepstra(filter_energies: &[Vec<f64>], n_ceps: usize) -> Result<Vec<Vec<f64>>> {
    let Some(first) = filter_energies.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    if n_ceps > n {
        return Err(Error::config(format!("{n_ceps} cepstra requested from {n} filters")));
    }
    // dct[k][i] = s_k · cos(π(i+0.5)k/n)
    let mut dct = vec![vec![0.0; n]; n_ceps];
    for (k, row) in dct.iter_mut().enumerate() {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    filter_energies
        .iter()
        .map(|energies| {
            if energies.len() != n {
                return Err(Error::data("ragged filter energy rows"));
            }
            let logs: Vec<f64> = energies.iter().map(|&e| e.max(LOG_FLOOR).ln()).collect();
            Ok(dct.iter().map(|row| row.iter().zip(&logs).map(|(&d, &l)| d * l).sum()).collect())
        })
        .collect()
}

// ── full pipeline ───────────────────────────────────────────────────────

/// Clip to a normalized [1, 1, 60, T] feature map. Deterministic; finite for
/// any input in [-1, 1] including silence.
pub fn featurize(clip: &AudioClip, kind: FeatureKind) -> Result<FeatureMap> {
    let frames = frame_and_window(&clip.samples, WIN, HOP)?;
    let spectra = power_spectrum(&frames, NFFT)?;
    let fb = Filterbank::new(kind.into(), N_FILTERS, clip.sample_rate, NFFT)?;
    let energies: Vec<Vec<f64>> = spectra.iter().map(|s| fb.apply(s)).collect();
    let ceps = cepstra(&energies, N_CEPS)?;
    let t_frames = ceps.len();
    if t_frames != clip.duration.frames() {
        return Err(Error::data(format!(
            "{t_frames} frames from a {} s clip, expected {}",
            clip.duration,
            clip.duration.frames()
        )));
    }
    // transpose to [F, T], then normalize each bin over time
    let mut data = vec![0.0; N_CEPS * t_frames];
    for (t, row) in ceps.iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            data[f * t_frames + t] = v;
        }
    }
    for f in 0..N_CEPS {
        let row = &mut data[f * t_frames..(f + 1) * t_frames];
        let mean = row.iter().sum::<f64>() / t_frames as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t_frames as f64;
        if var <= 1e-24 {
            row.fill(0.0);
        } else {
            let inv = 1.0 / var.sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
    }
    let tensor = Tensor::from_vec(&[1, 1, N_CEPS, t_frames], data)?;
    Ok(FeatureMap { tensor, kind, duration: clip.duration })
}
