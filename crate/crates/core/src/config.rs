//! Experiment configuration shared by every command.
//!
//! The file is a single JSON document. Every field is optional and unknown
//! fields are rejected, so `{}` is the default desk-scale experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, MfccConfig, StftConfig};
use crate::error::{Error, Result};
use crate::eval::{snr_grid, LoocvConfig, Method, PriorConfig, TrainingTargets};
use crate::gp::GpFitConfig;
use crate::localize::RoomGrid;
use crate::nmf::NmfConfig;
use crate::sim::SceneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Search-grid spacing in metres.
    pub resolution: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnrRange {
    pub min_db: f64,
    pub max_db: f64,
    pub step_db: f64,
}

impl Default for SnrRange {
    fn default() -> Self {
        Self {
            min_db: -60.0,
            max_db: 18.0,
            step_db: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub methods: Vec<Method>,
    pub prior: PriorConfig,
    pub training_targets: TrainingTargets,
    pub snr: SnrRange,
    /// Keep only the first windows of every location.
    pub max_windows: Option<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            methods: Method::all(),
            prior: PriorConfig::default(),
            training_targets: TrainingTargets::default(),
            snr: SnrRange::default(),
            max_windows: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub stft: StftConfig,
    pub nmf: NmfConfig,
    pub mfcc: MfccConfig,
    pub gp: GpFitConfig,
    pub grid: GridConfig,
    /// Feature kind of the model written by `train`.
    pub feature: FeatureKind,
    pub evaluation: EvaluationConfig,
    /// Master seed for NMF initialization and noise excerpts. The scene has
    /// its own seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            stft: StftConfig::default(),
            nmf: NmfConfig::default(),
            mfcc: MfccConfig::default(),
            gp: GpFitConfig::default(),
            grid: GridConfig::default(),
            feature: FeatureKind::SnmfWf,
            evaluation: EvaluationConfig::default(),
            seed: 0,
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file. Syntax and schema problems are
    /// reported as configuration errors; an unreadable file is an I/O error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.stft.validate().map_err(as_config)?;
        self.nmf.validate()?;
        self.gp.validate()?;
        self.search_grid()?;
        if self.mfcc.n_coeffs == 0 || self.mfcc.n_filters < self.mfcc.n_coeffs {
            return Err(Error::Config("mfcc needs 1..=n_filters coefficients".into()));
        }
        if self.evaluation.methods.is_empty() {
            return Err(Error::Config("evaluation.methods must not be empty".into()));
        }
        if !(self.evaluation.prior.std > 0.0) {
            return Err(Error::Config("evaluation.prior.std must be positive".into()));
        }
        if self.evaluation.max_windows == Some(0) {
            return Err(Error::Config("evaluation.max_windows must be at least 1".into()));
        }
        self.snrs()?;
        Ok(())
    }

    /// Search grid covering the scene's room.
    pub fn search_grid(&self) -> Result<RoomGrid> {
        RoomGrid::for_room(self.scene.room.0, self.scene.room.1, self.grid.resolution).map_err(as_config)
    }

    /// Sweep SNRs, highest first.
    pub fn snrs(&self) -> Result<Vec<f64>> {
        let r = self.evaluation.snr;
        snr_grid(r.min_db, r.max_db, r.step_db)
    }

    pub fn loocv(&self) -> Result<LoocvConfig> {
        Ok(LoocvConfig {
            grid: self.search_grid()?,
            gp: self.gp,
            prior: self.evaluation.prior,
            training: self.evaluation.training_targets,
        })
    }

    /// Feature kinds needed by the selected methods, deduplicated.
    pub fn method_kinds(&self) -> Vec<FeatureKind> {
        let mut kinds: Vec<FeatureKind> = self.evaluation.methods.iter().map(|m| m.feature).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }
}
