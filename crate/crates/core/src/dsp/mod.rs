//! Time-frequency front end: audio clips, STFT, MFCC baseline features and
//! SNR-controlled mixing.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod mfcc;
pub mod wav;

pub use mfcc::{mfcc, MelFilterbank, MfccConfig};

pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;

/// Mono audio with a fixed sample rate. Samples are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sample range `[start, start + len)`; panics if out of bounds.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Elementwise sum of two clips of equal rate and length.
    pub fn add(&self, other: &AudioClip) -> Result<Self> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                what: "clip length",
                expected: self.len(),
                got: other.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            samples,
            sample_rate: self.sample_rate,
        })
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// One-sided complex STFT, indexed `(frequency bin, frame)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Array2<Complex64>,
    frame_size: usize,
    hop: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn from_parts(
        values: Array2<Complex64>,
        frame_size: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let (f, t) = values.dim();
        if f != frame_size / 2 + 1 {
            return Err(Error::DimensionMismatch {
                what: "frequency bins",
                expected: frame_size / 2 + 1,
                got: f,
            });
        }
        if t == 0 {
            return Err(Error::invalid("spectrogram needs at least one frame"));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(Self {
            values,
            frame_size,
            hop,
            sample_rate,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn n_freqs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.frame_size as f64
    }

    /// `|X|²` elementwise.
    pub fn power(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Same framing, new values (e.g. a filtered copy).
    pub fn with_values(&self, values: Array2<Complex64>) -> Self {
        assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            frame_size: self.frame_size,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.with_values(self.values.mapv(|v| v * gain))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Log root-sum-square of Wiener-filtered landmark estimates.
    SnmfWf,
    /// Log mean landmark activation.
    SnmfAct,
    Mfcc,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::SnmfAct, FeatureKind::SnmfWf];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::SnmfWf => "snmf_wf",
            FeatureKind::SnmfAct => "snmf_act",
            FeatureKind::Mfcc => "mfcc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, kind: FeatureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite {} feature", kind.name())));
        }
        Ok(Self { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            hop: 1024,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.frame_size.is_power_of_two() || self.frame_size < 2 {
            return Err(Error::invalid(format!(
                "frame size {} is not a power of two",
                self.frame_size
            )));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::invalid(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_size
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT analyzer (window and FFT plan are built once).
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.frame_size);
        Ok(Self {
            window: hann(config.frame_size),
            config,
            fft,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn process(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let StftConfig { frame_size, hop } = self.config;
        if clip.len() < frame_size {
            return Err(Error::InsufficientSamples {
                needed: frame_size,
                got: clip.len(),
            });
        }
        let n_frames = (clip.len() - frame_size) / hop + 1;
        let n_freqs = frame_size / 2 + 1;
        let mut values = Array2::zeros((n_freqs, n_frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let samples = clip.samples();
        for t in 0..n_frames {
            let frame = &samples[t * hop..t * hop + frame_size];
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (f, v) in buf[..n_freqs].iter().enumerate() {
                values[[f, t]] = *v;
            }
        }
        Ok(Spectrogram {
            values,
            frame_size,
            hop,
            sample_rate: clip.sample_rate(),
        })
    }
}

/// Hann-windowed one-sided STFT. Requires a power-of-two `frame_size`,
/// `0 < hop <= frame_size` and at least one full frame of samples.
pub fn stft(clip: &AudioClip, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    Stft::new(StftConfig { frame_size, hop })?.process(clip)
}

/// Splits a clip into consecutive non-overlapping windows; the trailing
/// remainder shorter than one window is dropped.
pub fn window_clip(clip: &AudioClip, window_seconds: f64) -> Vec<AudioClip> {
    if !(window_seconds > 0.0) {
        return Vec::new();
    }
    let len = (window_seconds * clip.sample_rate() as f64).round() as usize;
    if len == 0 {
        return Vec::new();
    }
    clip.samples()
        .chunks_exact(len)
        .map(|c| AudioClip {
            samples: c.to_vec(),
            sample_rate: clip.sample_rate(),
        })
        .collect()
}

/// Adds `noise` (cropped to the signal length) scaled so that the full-clip
/// RMS ratio equals `snr_db`.
pub fn mix_at_snr(signal: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch(
            signal.sample_rate(),
            noise.sample_rate(),
        ));
    }
    if noise.len() < signal.len() {
        return Err(Error::InsufficientSamples {
            needed: signal.len(),
            got: noise.len(),
        });
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    let noise = &noise.samples()[..signal.len()];
    let signal_rms = signal.rms();
    let noise_rms = rms(noise);
    if signal_rms == 0.0 {
        return Err(Error::ZeroEnergy("signal"));
    }
    if noise_rms == 0.0 {
        return Err(Error::ZeroEnergy("noise"));
    }
    let gain = signal_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let samples = signal
        .samples()
        .iter()
        .zip(noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    AudioClip::new(samples, signal.sample_rate())
}
