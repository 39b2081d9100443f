use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WindowSource;
use crate::dsp::{mfcc, mix_at_snr, AudioClip, FeatureKind, MfccConfig, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::localize::Point;
use crate::nmf::{decompose, NmfModel};
use crate::seed;

const NOISE_OFFSET: u64 = 11;
const DECOMPOSE: u64 = 12;

/// Turns one analysis window into feature vectors of several kinds.
pub struct FeatureExtractor {
    stft: Stft,
    nmf: Option<NmfModel>,
    mfcc: MfccConfig,
    seed: u64,
}

impl FeatureExtractor {
    pub fn new(stft: StftConfig, nmf: Option<NmfModel>, mfcc: MfccConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            stft: Stft::new(stft)?,
            nmf,
            mfcc,
            seed,
        })
    }

    pub fn nmf(&self) -> Option<&NmfModel> {
        self.nmf.as_ref()
    }

    /// Features of `clip` in the order of `kinds`. One decomposition serves
    /// both NMF feature kinds. `window_id` selects the NMF initialization.
    pub fn extract(&self, clip: &AudioClip, kinds: &[FeatureKind], window_id: &[u64]) -> Result<Vec<Vec<f64>>> {
        let spec = self.stft.process(clip)?;
        let needs_nmf = kinds.iter().any(|k| *k != FeatureKind::Mfcc);
        let dec = if needs_nmf {
            let model = self
                .nmf
                .as_ref()
                .ok_or_else(|| Error::Config("NMF features requested without an NMF model".into()))?;
            let mut path = vec![DECOMPOSE];
            path.extend_from_slice(window_id);
            Some(decompose(&spec, model, seed::derive(self.seed, &path))?)
        } else {
            None
        };
        kinds
            .iter()
            .map(|kind| {
                let v = match kind {
                    FeatureKind::SnmfWf => dec.as_ref().unwrap().wiener_features()?,
                    FeatureKind::SnmfAct => dec.as_ref().unwrap().activation_features()?,
                    FeatureKind::Mfcc => mfcc(&spec, &self.mfcc)?,
                };
                Ok(v.values)
            })
            .collect()
    }
}

/// Which version of each evaluation window is analysed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    /// Mixed with the background noise at this SNR in dB.
    Snr(f64),
}

impl Condition {
    pub fn snr_db(self) -> Option<f64> {
        match self {
            Condition::Clean => None,
            Condition::Snr(s) => Some(s),
        }
    }
}

/// Features of one kind for every window at every location.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub locations: Vec<Point>,
    /// `[location][window]` feature vectors.
    pub windows: Vec<Vec<Vec<f64>>>,
}

impl FeatureSet {
    pub fn n_windows(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.windows.iter().flatten().next().map_or(0, Vec::len)
    }

    /// Mean feature vector per location.
    pub fn location_means(&self) -> Vec<Vec<f64>> {
        self.windows
            .iter()
            .map(|ws| {
                let mut acc = vec![0.0; self.dim()];
                for w in ws {
                    for (a, v) in acc.iter_mut().zip(w) {
                        *a += v;
                    }
                }
                acc.into_iter().map(|a| a / ws.len().max(1) as f64).collect()
            })
            .collect()
    }
}

/// Excerpt of `noise` used for window `window` at `location`; fixed across
/// SNRs so that sweeps differ only in the mixing gain.
fn noise_segment(noise: &AudioClip, len: usize, location: usize, window: usize, master: u64) -> Result<AudioClip> {
    if noise.len() < len {
        return Err(Error::InsufficientSamples {
            needed: len,
            got: noise.len(),
        });
    }
    let span = (noise.len() - len + 1) as u64;
    let start = seed::derive(master, &[NOISE_OFFSET, location as u64, window as u64]) % span;
    Ok(noise.slice(start as usize, len))
}

/// Extracts `[condition][kind]` feature sets. `max_windows` keeps only the
/// first windows at each location.
pub fn extract_feature_sets(
    source: &dyn WindowSource,
    extractor: &FeatureExtractor,
    kinds: &[FeatureKind],
    conditions: &[Condition],
    noise: Option<&AudioClip>,
    max_windows: Option<usize>,
) -> Result<Vec<Vec<FeatureSet>>> {
    if conditions.iter().any(|c| c.snr_db().is_some()) && noise.is_none() {
        return Err(Error::Config("noisy conditions need a background noise clip".into()));
    }
    if let Some(n) = noise {
        if n.sample_rate() != source.sample_rate() {
            return Err(Error::SampleRateMismatch(source.sample_rate(), n.sample_rate()));
        }
    }
    let locations = source.locations();
    // per location: [condition][kind][window]
    let per_location: Vec<Vec<Vec<Vec<Vec<f64>>>>> = (0..locations.len())
        .into_par_iter()
        .map(|loc| {
            let mut windows = source.windows(loc)?;
            if let Some(n) = max_windows {
                windows.truncate(n);
            }
            if windows.is_empty() {
                return Err(Error::invalid(format!("location {} has no complete window", locations[loc])));
            }
            let mut out = vec![vec![Vec::with_capacity(windows.len()); kinds.len()]; conditions.len()];
            for (w, clip) in windows.iter().enumerate() {
                for (c, condition) in conditions.iter().enumerate() {
                    let input = match condition.snr_db() {
                        None => clip.clone(),
                        Some(snr) => {
                            let seg = noise_segment(noise.unwrap(), clip.len(), loc, w, extractor.seed)?;
                            mix_at_snr(clip, &seg, snr)?
                        }
                    };
                    let feats = extractor.extract(&input, kinds, &[loc as u64, w as u64])?;
                    for (k, f) in feats.into_iter().enumerate() {
                        out[c][k].push(f);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..conditions.len())
        .map(|c| {
            kinds
                .iter()
                .enumerate()
                .map(|(k, kind)| FeatureSet {
                    kind: *kind,
                    locations: locations.clone(),
                    windows: per_location.iter().map(|l| l[c][k].clone()).collect(),
                })
                .collect()
        })
        .collect())
}
