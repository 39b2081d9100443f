//! Circular-error metrics, leave-one-location-out evaluation and SNR
//! sweeps.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureKind;
use crate::error::{Error, Result};
use crate::localize::{Point, RoomGrid};

mod features;
mod loocv;
mod manifest;

pub use features::{extract_feature_sets, Condition, FeatureExtractor, FeatureSet};
pub use loocv::{fold_training_set, loocv, Localization, LoocvConfig, PriorConfig, TrainingTargets, Trial};
pub use manifest::{DatasetManifest, ManifestDataset, ManifestEntry, Role, WindowSource};

/// Euclidean distance in the floor plane.
pub fn circular_error(estimate: &Point, truth: &Point) -> f64 {
    estimate.distance(truth)
}

/// Percentile of sorted data with linear interpolation between closest
/// ranks: position `p·(n−1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub cep: f64,
    pub mean: f64,
    pub ce95: f64,
}

/// Summary statistics plus the eCDF as `(ce, fraction ≤ ce)` steps, one per
/// distinct error value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub summary: ErrorSummary,
    pub ecdf: Vec<(f64, f64)>,
}

pub fn summarize(ces: &[f64]) -> Result<Summary> {
    if ces.is_empty() {
        return Err(Error::invalid("cannot summarize an empty error list"));
    }
    if ces.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("circular errors must be finite and nonnegative"));
    }
    let mut sorted = ces.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut ecdf: Vec<(f64, f64)> = Vec::new();
    for (i, c) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n as f64;
        match ecdf.last_mut() {
            Some(last) if last.0 == *c => last.1 = frac,
            _ => ecdf.push((*c, frac)),
        }
    }
    Ok(Summary {
        summary: ErrorSummary {
            count: n,
            cep: percentile(&sorted, 0.5),
            mean: sorted.iter().sum::<f64>() / n as f64,
            ce95: percentile(&sorted, 0.95),
        },
        ecdf,
    })
}

/// Errors of guessing a uniformly random search-grid node, pooled over all
/// `(node, location)` pairs.
pub fn random_guess_errors(grid: &RoomGrid, locations: &[Point]) -> Vec<f64> {
    let nodes: Vec<Point> = grid.nodes().collect();
    locations
        .iter()
        .flat_map(|l| nodes.iter().map(move |n| circular_error(n, l)))
        .collect()
}

/// First SNR, scanning from the highest downwards, whose CEP exceeds 90 % of
/// the CEP at the lowest SNR.
pub fn saturation_snr(curve: &[(f64, f64)]) -> Option<f64> {
    let mut points = curve.to_vec();
    points.sort_by(|a, b| b.0.total_cmp(&a.0));
    let floor = points.last()?.1;
    points.iter().find(|(_, cep)| *cep > 0.9 * floor).map(|p| p.0)
}

/// A feature kind paired with a localization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub feature: FeatureKind,
    pub localization: Localization,
}

impl Method {
    pub const fn new(feature: FeatureKind, localization: Localization) -> Self {
        Self { feature, localization }
    }

    /// Every feature × localization combination.
    pub fn all() -> Vec<Method> {
        [FeatureKind::Mfcc, FeatureKind::SnmfAct, FeatureKind::SnmfWf]
            .iter()
            .flat_map(|f| Localization::ALL.iter().map(move |l| Method::new(*f, *l)))
            .collect()
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.feature.name(), self.localization.name())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (f, l) = s
            .split_once('+')
            .ok_or_else(|| Error::Config(format!("method {s:?} must look like <feature>+<localization>")))?;
        let feature = FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == f)
            .ok_or_else(|| Error::Config(format!("unknown feature {f:?}")))?;
        let localization = Localization::ALL
            .into_iter()
            .find(|k| k.name() == l)
            .ok_or_else(|| Error::Config(format!("unknown localization {l:?}")))?;
        Ok(Method::new(feature, localization))
    }
}

/// Per-trial errors and their summary for one method under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub condition: Condition,
    pub trials: Vec<Trial>,
    pub summary: ErrorSummary,
    pub ecdf: Vec<(f64, f64)>,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(method: &Method, condition: Condition, trials: Vec<Trial>, config: serde_json::Value) -> Result<Self> {
        let ces: Vec<f64> = trials.iter().map(|t| t.ce).collect();
        let s = summarize(&ces)?;
        Ok(Self {
            method: method.name(),
            condition,
            trials,
            summary: s.summary,
            ecdf: s.ecdf,
            config,
        })
    }

    pub fn ces(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.ce).collect()
    }

    /// eCDF as CSV with header `ce,fraction`.
    pub fn write_ecdf_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "ce,fraction")?;
        for (c, f) in &self.ecdf {
            writeln!(out, "{c},{f}")?;
        }
        Ok(())
    }
}

/// Summary table as CSV with header `method,snr_db,count,cep,mean,ce95`;
/// noise-free rows carry `clean` in the SNR column.
pub fn write_summary_csv(reports: &[EvalReport], mut out: impl Write) -> Result<()> {
    writeln!(out, "method,snr_db,count,cep,mean,ce95")?;
    for r in reports {
        let snr = r.condition.snr_db().map_or_else(|| "clean".to_string(), |s| s.to_string());
        let s = r.summary;
        writeln!(out, "{},{},{},{},{},{}", r.method, snr, s.count, s.cep, s.mean, s.ce95)?;
    }
    Ok(())
}

/// SNRs from `max` down to `min` in steps of `step` dB, highest first.
pub fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || max < min {
        return Err(Error::Config(format!("bad SNR range {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| max - i as f64 * step).collect())
}

/// Runs LOOCV for every method and every test condition, sharing feature
/// extraction and per-fold training where possible. Reports are ordered
/// condition-major, then by method in the given order.
pub fn evaluate_methods(
    train: &[FeatureSet],
    tests: &[(Condition, Vec<FeatureSet>)],
    methods: &[Method],
    config: &LoocvConfig,
    echo: &serde_json::Value,
) -> Result<Vec<EvalReport>> {
    let mut slots: Vec<Vec<Option<EvalReport>>> = vec![vec![None; methods.len()]; tests.len()];
    let mut kinds: Vec<FeatureKind> = methods.iter().map(|m| m.feature).collect();
    kinds.sort_by_key(|k| k.name());
    kinds.dedup();
    for kind in kinds {
        let train_set = train
            .iter()
            .find(|s| s.kind == kind)
            .ok_or_else(|| Error::invalid(format!("no training features of kind {}", kind.name())))?;
        let test_sets = tests
            .iter()
            .map(|(_, sets)| {
                sets.iter()
                    .find(|s| s.kind == kind)
                    .ok_or_else(|| Error::invalid(format!("no test features of kind {}", kind.name())))
            })
            .collect::<Result<Vec<_>>>()?;
        let idx: Vec<usize> = (0..methods.len()).filter(|i| methods[*i].feature == kind).collect();
        let locs: Vec<Localization> = idx.iter().map(|i| methods[*i].localization).collect();
        let trials = loocv(train_set, &test_sets, &locs, config)?;
        for (t, per_loc) in trials.into_iter().enumerate() {
            for (j, tr) in per_loc.into_iter().enumerate() {
                slots[t][idx[j]] = Some(EvalReport::new(&methods[idx[j]], tests[t].0, tr, echo.clone())?);
            }
        }
    }
    Ok(slots.into_iter().flatten().map(|r| r.expect("every slot is filled")).collect())
}
