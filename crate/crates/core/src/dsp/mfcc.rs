use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureVector, Spectrogram};
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub n_filters: usize,
    pub f_min: f64,
    /// Upper edge in Hz; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_coeffs: 20,
            n_filters: 40,
            f_min: 0.0,
            f_max: None,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the bins of a one-sided spectrum.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `(first bin, weights)` per filter.
    filters: Vec<(usize, Vec<f64>)>,
    n_freqs: usize,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, frame_size: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Self {
        let n_freqs = frame_size / 2 + 1;
        let lo = hz_to_mel(f_min);
        let hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / frame_size as f64;
        let filters = edges
            .windows(3)
            .map(|e| {
                let (left, center, right) = (e[0], e[1], e[2]);
                let weights: Vec<(usize, f64)> = (0..n_freqs)
                    .filter_map(|f| {
                        let hz = f as f64 * bin_hz;
                        let w = if hz > left && hz <= center {
                            (hz - left) / (center - left)
                        } else if hz > center && hz < right {
                            (right - hz) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((f, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => {
                        let end = weights.last().unwrap().0;
                        let mut dense = vec![0.0; end - start + 1];
                        for (f, w) in weights {
                            dense[f - start] = w;
                        }
                        (start, dense)
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self { filters, n_freqs }
    }

    pub fn for_spectrogram(spec: &Spectrogram, config: &MfccConfig) -> Self {
        let nyquist = spec.sample_rate() as f64 / 2.0;
        Self::new(
            config.n_filters,
            spec.frame_size(),
            spec.sample_rate(),
            config.f_min,
            config.f_max.unwrap_or(nyquist).min(nyquist),
        )
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Filter energies for one power-spectrum column.
    pub fn apply(&self, power: impl Fn(usize) -> f64) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(start, w)| w.iter().enumerate().map(|(i, w)| w * power(start + i)).sum())
            .collect()
    }
}

/// Orthonormal DCT-II, keeping the first `n_out` coefficients.
fn dct2(input: &[f64], n_out: usize) -> Vec<f64> {
    let m = input.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * input
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Frame-averaged MFCCs of a spectrogram (one vector per clip).
pub fn mfcc(spec: &Spectrogram, config: &MfccConfig) -> Result<FeatureVector> {
    if config.n_coeffs == 0 || config.n_coeffs > config.n_filters {
        return Err(Error::invalid(format!(
            "n_coeffs {} must be in 1..={}",
            config.n_coeffs, config.n_filters
        )));
    }
    let bank = MelFilterbank::for_spectrogram(spec, config);
    debug_assert_eq!(bank.n_freqs, spec.n_freqs());
    let values = spec.values();
    let mut acc = vec![0.0; config.n_coeffs];
    for t in 0..spec.n_frames() {
        let log_mel: Vec<f64> = bank
            .apply(|f| values[[f, t]].norm_sqr())
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect();
        for (a, c) in acc.iter_mut().zip(dct2(&log_mel, config.n_coeffs)) {
            *a += c;
        }
    }
    let t = spec.n_frames() as f64;
    FeatureVector::new(acc.into_iter().map(|a| a / t).collect(), FeatureKind::Mfcc)
}
