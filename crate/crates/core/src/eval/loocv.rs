use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{circular_error, FeatureSet};
use crate::error::{Error, Result};
use crate::gp::GpFitConfig;
use crate::localize::{
    fit_location_gps, imu_like_prior, posterior_map, DirectRegression, Point, PredictiveField, RoomGrid,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// GP regression from features straight to coordinates.
    Regression,
    /// Grid-search maximum of the spatial likelihood.
    Likelihood,
    /// Grid-search maximum of likelihood times the drifted prior.
    LikelihoodPrior,
}

impl Localization {
    pub const ALL: [Localization; 3] = [Localization::Regression, Localization::Likelihood, Localization::LikelihoodPrior];

    pub fn name(self) -> &'static str {
        match self {
            Localization::Regression => "regression",
            Localization::Likelihood => "likelihood",
            Localization::LikelihoodPrior => "likelihood_prior",
        }
    }
}

/// Drifted prior centred on `truth + drift` with isotropic `std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub drift: (f64, f64),
    pub std: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            drift: (5.0, 5.0),
            std: 5.0,
        }
    }
}

/// What the per-fold location GPs are trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingTargets {
    /// One averaged feature vector per location.
    #[default]
    LocationMean,
    /// Every window as a separate training sample.
    Windows,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoocvConfig {
    pub grid: RoomGrid,
    pub gp: GpFitConfig,
    pub prior: PriorConfig,
    pub training: TrainingTargets,
}

/// One localized window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub fold: usize,
    pub window: usize,
    pub truth: Point,
    pub estimate: Point,
    pub ce: f64,
}

/// Training pairs for the fold holding out `fold`: every location other
/// than the held-out one (by coordinates, so duplicates are excluded too).
pub fn fold_training_set(train: &FeatureSet, fold: usize, targets: TrainingTargets) -> (Vec<Point>, Vec<Vec<f64>>) {
    let held_out = train.locations[fold];
    let keep = |i: &usize| train.locations[*i] != held_out;
    match targets {
        TrainingTargets::LocationMean => {
            let means = train.location_means();
            (0..train.locations.len())
                .filter(keep)
                .map(|i| (train.locations[i], means[i].clone()))
                .unzip()
        }
        TrainingTargets::Windows => (0..train.locations.len())
            .filter(keep)
            .flat_map(|i| train.windows[i].iter().map(move |w| (train.locations[i], w.clone())))
            .unzip(),
    }
}

/// Leave-one-location-out evaluation. Models are trained once per fold on
/// `train` and reused for every set in `tests` (e.g. several noise
/// conditions) and every localization in `localizations`.
///
/// Returns trials indexed `[test][localization]`.
pub fn loocv(
    train: &FeatureSet,
    tests: &[&FeatureSet],
    localizations: &[Localization],
    config: &LoocvConfig,
) -> Result<Vec<Vec<Vec<Trial>>>> {
    let n = train.locations.len();
    let distinct = train.locations.iter().filter(|p| **p != train.locations[0]).count();
    if n < 2 || distinct == 0 {
        return Err(Error::InsufficientSamples { needed: 2, got: n.min(1) });
    }
    for t in tests {
        if t.locations != train.locations || t.kind != train.kind {
            return Err(Error::invalid("test features must cover the training locations with the same kind"));
        }
    }
    let needs_field = localizations.iter().any(|l| *l != Localization::Regression);
    let per_fold: Vec<Vec<Vec<Vec<Trial>>>> = (0..n)
        .into_par_iter()
        .map(|fold| {
            let truth = train.locations[fold];
            let attach = |e: Error| Error::Fold {
                fold,
                x: truth.x,
                y: truth.y,
                source: Box::new(e),
            };
            let (locations, features) = fold_training_set(train, fold, config.training);
            debug_assert!(locations.iter().all(|p| *p != truth));
            let field = if needs_field {
                let gps = fit_location_gps(&locations, &features, &config.gp).map_err(attach)?;
                Some(PredictiveField::new(&gps, &config.grid).map_err(attach)?)
            } else {
                None
            };
            let regression = if localizations.contains(&Localization::Regression) {
                let (reg_locations, reg_features) = fold_training_set(train, fold, TrainingTargets::LocationMean);
                Some(DirectRegression::fit(&reg_features, &reg_locations, &config.gp).map_err(attach)?)
            } else {
                None
            };
            let prior = imu_like_prior(truth, config.prior.drift, config.prior.std).map_err(attach)?;
            tests
                .iter()
                .map(|test| {
                    localizations
                        .iter()
                        .map(|loc| {
                            test.windows[fold]
                                .iter()
                                .enumerate()
                                .map(|(window, psi)| {
                                    let estimate = match loc {
                                        Localization::Regression => regression.as_ref().unwrap().predict(psi)?,
                                        Localization::Likelihood => field.as_ref().unwrap().log_likelihood(psi)?.argmax(),
                                        Localization::LikelihoodPrior => {
                                            let lik = field.as_ref().unwrap().log_likelihood(psi)?;
                                            posterior_map(&lik, &prior)?.argmax()
                                        }
                                    };
                                    Ok(Trial {
                                        fold,
                                        window,
                                        truth,
                                        estimate,
                                        ce: circular_error(&estimate, &truth),
                                    })
                                })
                                .collect::<Result<Vec<_>>>()
                                .map_err(attach)
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..tests.len())
        .map(|t| {
            (0..localizations.len())
                .map(|l| per_fold.iter().flat_map(|f| f[t][l].iter().copied()).collect())
                .collect()
        })
        .collect())
}
