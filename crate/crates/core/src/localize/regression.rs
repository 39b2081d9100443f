use nalgebra::DMatrix;

use super::Point;
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, GpModel, KernelParams};

/// Baseline that regresses each room coordinate directly on the feature
/// vector with its own GP. Features are standardized per dimension.
#[derive(Clone, Debug)]
pub struct DirectRegression {
    offset: Vec<f64>,
    scale: Vec<f64>,
    gp_x: GpModel,
    gp_y: GpModel,
}

fn standardizer(features: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = features.first().map_or(0, Vec::len);
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::invalid("regression features must be non-empty and of equal length"));
    }
    let n = features.len() as f64;
    let offset: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let scale = (0..d)
        .map(|j| {
            let var = features.iter().map(|f| (f[j] - offset[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    Ok((offset, scale))
}

fn median_pairwise_distance(inputs: &DMatrix<f64>) -> f64 {
    let n = inputs.nrows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            d.push((inputs.row(i) - inputs.row(j)).norm());
        }
    }
    d.sort_by(f64::total_cmp);
    match d.get(d.len() / 2) {
        Some(&m) if m > 1e-9 => m,
        _ => 1.0,
    }
}

impl DirectRegression {
    fn inputs(offset: &[f64], scale: &[f64], features: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(features.len(), offset.len(), |i, j| (features[i][j] - offset[j]) / scale[j])
    }

    fn check(features: &[Vec<f64>], locations: &[Point]) -> Result<()> {
        if features.len() != locations.len() {
            return Err(Error::DimensionMismatch {
                what: "regression training locations",
                expected: features.len(),
                got: locations.len(),
            });
        }
        if features.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Fits both coordinate GPs by evidence maximization. The length-scale
    /// floor of `config` is ignored; the initial length scale is the median
    /// pairwise distance between standardized features.
    pub fn fit(features: &[Vec<f64>], locations: &[Point], config: &GpFitConfig) -> Result<Self> {
        Self::check(features, locations)?;
        let (offset, scale) = standardizer(features)?;
        let inputs = Self::inputs(&offset, &scale, features);
        let gamma = median_pairwise_distance(&inputs);
        let config = GpFitConfig {
            gamma_min: 0.0,
            ..*config
        };
        let fit = |targets: Vec<f64>| {
            let mean = targets.iter().sum::<f64>() / targets.len() as f64;
            let centered: Vec<f64> = targets.iter().map(|t| t - mean).collect();
            let init = KernelParams {
                gamma,
                ..KernelParams::initial_guess(&centered)
            };
            GpModel::fit(inputs.clone(), &targets, Some(init), &config)
        };
        let gp_x = fit(locations.iter().map(|p| p.x).collect())?;
        let gp_y = fit(locations.iter().map(|p| p.y).collect())?;
        Ok(Self {
            offset,
            scale,
            gp_x,
            gp_y,
        })
    }

    pub fn with_params(
        features: &[Vec<f64>],
        locations: &[Point],
        params_x: KernelParams,
        params_y: KernelParams,
    ) -> Result<Self> {
        Self::check(features, locations)?;
        let (offset, scale) = standardizer(features)?;
        let inputs = Self::inputs(&offset, &scale, features);
        let xs: Vec<f64> = locations.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = locations.iter().map(|p| p.y).collect();
        Ok(Self {
            gp_x: GpModel::with_params(inputs.clone(), &xs, params_x)?,
            gp_y: GpModel::with_params(inputs, &ys, params_y)?,
            offset,
            scale,
        })
    }

    pub fn params(&self) -> (KernelParams, KernelParams) {
        (*self.gp_x.params(), *self.gp_y.params())
    }

    /// Predicted location: the pair of predictive means.
    pub fn predict(&self, features: &[f64]) -> Result<Point> {
        if features.len() != self.offset.len() {
            return Err(Error::DimensionMismatch {
                what: "feature length",
                expected: self.offset.len(),
                got: features.len(),
            });
        }
        let z: Vec<f64> = features
            .iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(f, (o, s))| (f - o) / s)
            .collect();
        Ok(Point::new(self.gp_x.predict(&z).mean, self.gp_y.predict(&z).mean))
    }
}
