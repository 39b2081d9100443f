//! Trained-model persistence: NMF dictionaries and location GPs in one JSON
//! document. The layout is described in `docs/model-schema.md`.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, FeatureKind, MfccConfig, StftConfig};
use crate::error::{Error, Result};
use crate::eval::FeatureExtractor;
use crate::gp::{GpModel, KernelParams};
use crate::localize::{GaussianPrior, LikelihoodMap, Point, PredictiveField, RoomGrid};
use crate::nmf::{BasisMatrix, NmfConfig, NmfModel};

pub const FORMAT: &str = "soundloc-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmfSourceDoc {
    pub source_id: usize,
    /// Basis count `L`.
    pub n_bases: usize,
    /// Frequency bins `F`.
    pub n_freqs: usize,
    /// `F × L` dictionary, row-major.
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpDoc {
    pub theta: f64,
    pub gamma: f64,
    pub noise_var: f64,
    pub target_mean: f64,
    pub train_locations: Vec<[f64; 2]>,
    pub train_targets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop: usize,
    pub feature: FeatureKind,
    /// Number of landmark sources `K`.
    pub n_sources: usize,
    pub nmf: NmfConfig,
    pub nmf_sources: Vec<NmfSourceDoc>,
    pub mfcc: MfccConfig,
    /// One GP per feature dimension.
    pub gps: Vec<GpDoc>,
    pub grid: RoomGrid,
    pub seed: u64,
}

/// Everything needed to localize a new recording.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub feature: FeatureKind,
    pub nmf: NmfModel,
    pub mfcc: MfccConfig,
    pub gps: Vec<GpModel>,
    pub grid: RoomGrid,
    pub seed: u64,
}

impl TrainedModel {
    pub fn to_document(&self) -> ModelDocument {
        let nmf_sources = self
            .nmf
            .landmark_bases()
            .iter()
            .map(|b| NmfSourceDoc {
                source_id: b.source_id(),
                n_bases: b.n_bases(),
                n_freqs: b.n_freqs(),
                w: b.w().iter().copied().collect(),
            })
            .collect();
        let gps = self
            .gps
            .iter()
            .map(|gp| {
                let p = gp.params();
                let x = gp.inputs();
                GpDoc {
                    theta: p.theta,
                    gamma: p.gamma,
                    noise_var: p.noise_var,
                    target_mean: gp.target_mean(),
                    train_locations: (0..x.nrows()).map(|i| [x[(i, 0)], x[(i, 1)]]).collect(),
                    train_targets: gp.targets().to_vec(),
                }
            })
            .collect();
        ModelDocument {
            format: FORMAT.to_string(),
            sample_rate: self.sample_rate,
            frame_size: self.stft.frame_size,
            hop: self.stft.hop,
            feature: self.feature,
            n_sources: self.nmf.n_sources(),
            nmf: *self.nmf.config(),
            nmf_sources,
            mfcc: self.mfcc,
            gps,
            grid: self.grid.clone(),
            seed: self.seed,
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::invalid(format!("unsupported model format {:?}", doc.format)));
        }
        if doc.nmf_sources.len() != doc.n_sources {
            return Err(Error::DimensionMismatch {
                what: "NMF sources",
                expected: doc.n_sources,
                got: doc.nmf_sources.len(),
            });
        }
        let stft = StftConfig {
            frame_size: doc.frame_size,
            hop: doc.hop,
        };
        stft.validate()?;
        doc.grid.validate()?;
        let bases = doc
            .nmf_sources
            .into_iter()
            .map(|s| {
                if s.n_freqs != stft.frame_size / 2 + 1 {
                    return Err(Error::DimensionMismatch {
                        what: "basis frequency bins",
                        expected: stft.frame_size / 2 + 1,
                        got: s.n_freqs,
                    });
                }
                let w = Array2::from_shape_vec((s.n_freqs, s.n_bases), s.w)
                    .map_err(|e| Error::invalid(format!("source {}: {e}", s.source_id)))?;
                BasisMatrix::new(w, s.source_id)
            })
            .collect::<Result<Vec<_>>>()?;
        let nmf = NmfModel::new(bases, doc.nmf)?;
        let gps = doc
            .gps
            .into_iter()
            .map(|g| {
                let n = g.train_locations.len();
                let inputs = DMatrix::from_fn(n, 2, |i, j| g.train_locations[i][j]);
                let gp = GpModel::with_params(
                    inputs,
                    &g.train_targets,
                    KernelParams {
                        theta: g.theta,
                        gamma: g.gamma,
                        noise_var: g.noise_var,
                    },
                )?;
                if gp.target_mean() != g.target_mean {
                    return Err(Error::invalid("GP target_mean disagrees with train_targets"));
                }
                Ok(gp)
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = match doc.feature {
            FeatureKind::Mfcc => doc.mfcc.n_coeffs,
            _ => doc.n_sources,
        };
        if gps.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "location GPs",
                expected,
                got: gps.len(),
            });
        }
        Ok(Self {
            sample_rate: doc.sample_rate,
            stft,
            feature: doc.feature,
            nmf,
            mfcc: doc.mfcc,
            gps,
            grid: doc.grid,
            seed: doc.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_document())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ModelDocument = crate::io::read_json(path)?;
        Self::from_document(doc).map_err(|e| e.in_file(path))
    }

    /// Feature vector of a whole recording.
    pub fn features(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, clip.sample_rate()));
        }
        let extractor = FeatureExtractor::new(self.stft, Some(self.nmf.clone()), self.mfcc, self.seed)?;
        Ok(extractor.extract(clip, &[self.feature], &[])?.remove(0))
    }

    /// Likelihood map of a recording, fused with `prior` when given. Returns
    /// the argmax and the map.
    pub fn localize(&self, clip: &AudioClip, prior: Option<&GaussianPrior>) -> Result<(Point, LikelihoodMap)> {
        let psi = self.features(clip)?;
        let lik = PredictiveField::new(&self.gps, &self.grid)?.log_likelihood(&psi)?;
        let map = match prior {
            Some(p) => crate::localize::posterior_map(&lik, p)?,
            None => lik,
        };
        Ok((map.argmax(), map))
    }
}
