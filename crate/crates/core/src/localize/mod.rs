//! Grid search over spatial likelihoods, Gaussian priors and the
//! direct-regression baseline.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureVector;
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, GpModel, KernelParams, Prediction};

mod regression;

pub use regression::DirectRegression;

/// Log values are floored here so maps stay finite.
pub const LOG_FLOOR: f64 = -1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// Rectangular search grid. Nodes are ordered row-major with `y` as the
/// outer index, so node 0 is the lowest `(y, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: f64,
    /// Microphone height; carried as metadata only.
    pub z: f64,
}

impl RoomGrid {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), resolution: f64) -> Result<Self> {
        let grid = Self {
            x_range,
            y_range,
            resolution,
            z: 1.0,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid over `[0, width] × [0, depth]`.
    pub fn for_room(width: f64, depth: f64, resolution: f64) -> Result<Self> {
        Self::new((0.0, width), (0.0, depth), resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        if ![x0, x1, y0, y1, self.resolution].iter().all(|v| v.is_finite()) || x1 < x0 || y1 < y0 {
            return Err(Error::Config(format!(
                "grid ranges must be finite and ordered, got x {:?} y {:?}",
                self.x_range, self.y_range
            )));
        }
        if self.resolution <= 0.0 {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        if self.nx().saturating_mul(self.ny()) > 50_000_000 {
            return Err(Error::Config("grid has too many nodes".into()));
        }
        Ok(())
    }

    fn count(lo: f64, hi: f64, step: f64) -> usize {
        ((hi - lo) / step + 1e-9).floor() as usize + 1
    }

    pub fn nx(&self) -> usize {
        Self::count(self.x_range.0, self.x_range.1, self.resolution)
    }

    pub fn ny(&self) -> usize {
        Self::count(self.y_range.0, self.y_range.1, self.resolution)
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, index: usize) -> Point {
        let nx = self.nx();
        let (iy, ix) = (index / nx, index % nx);
        Point::new(
            self.x_range.0 + ix as f64 * self.resolution,
            self.y_range.0 + iy as f64 * self.resolution,
        )
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// Index of the node closest to `p` (clamped into the grid).
    pub fn nearest_index(&self, p: &Point) -> usize {
        let snap = |v: f64, lo: f64, n: usize| {
            (((v - lo) / self.resolution).round().max(0.0) as usize).min(n - 1)
        };
        let ix = snap(p.x, self.x_range.0, self.nx());
        let iy = snap(p.y, self.y_range.0, self.ny());
        iy * self.nx() + ix
    }

    /// Node coordinates as an `M × 2` matrix, in node order.
    pub fn node_matrix(&self) -> DMatrix<f64> {
        let nodes: Vec<Point> = self.nodes().collect();
        DMatrix::from_fn(nodes.len(), 2, |i, j| if j == 0 { nodes[i].x } else { nodes[i].y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Likelihood,
    Prior,
    Posterior,
}

/// Log values over the nodes of a [`RoomGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap {
    grid: RoomGrid,
    log_values: Vec<f64>,
    kind: MapKind,
}

impl LikelihoodMap {
    /// Values below [`LOG_FLOOR`] (including `-inf`) are raised to it; NaN is
    /// rejected.
    pub fn new(grid: RoomGrid, log_values: Vec<f64>, kind: MapKind) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "map values",
                expected: grid.len(),
                got: log_values.len(),
            });
        }
        if log_values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("map values contain NaN"));
        }
        let log_values = log_values.into_iter().map(|v| v.clamp(LOG_FLOOR, f64::MAX)).collect();
        Ok(Self {
            grid,
            log_values,
            kind,
        })
    }

    pub fn grid(&self) -> &RoomGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    /// Index of the maximal node; ties go to the lowest `(y, x)`.
    pub fn argmax_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.log_values.iter().enumerate() {
            if *v > self.log_values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax(&self) -> Point {
        self.grid.node(self.argmax_index())
    }

    pub fn max_value(&self) -> f64 {
        self.log_values[self.argmax_index()]
    }

    /// Probabilities normalized to sum to one over the grid.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.max_value();
        let p: Vec<f64> = self.log_values.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|v| v / total).collect()
    }

    /// CSV with header `x,y,log_value`, one row per node in node order.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "x,y,log_value")?;
        for (p, v) in self.grid.nodes().zip(&self.log_values) {
            writeln!(out, "{},{},{}", p.x, p.y, v)?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> MapSidecar {
        MapSidecar {
            kind: self.kind,
            resolution: self.grid.resolution,
            x_range: self.grid.x_range,
            y_range: self.grid.y_range,
            argmax: self.argmax(),
            max_log_value: self.max_value(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::from(e).in_file(csv_path))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush()?;
        let json = csv_path.with_extension("json");
        let text = crate::io::to_sorted_json(&self.sidecar())?;
        std::fs::write(&json, text).map_err(|e| Error::from(e).in_file(&json))?;
        Ok(())
    }
}

/// Metadata written alongside an exported map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub kind: MapKind,
    pub resolution: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub argmax: Point,
    pub max_log_value: f64,
}

/// Maximum-likelihood location: the best node of a likelihood map.
pub fn argmax_ml(map: &LikelihoodMap) -> Point {
    map.argmax()
}

/// Bivariate Gaussian over room coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mean: Point,
    cov: [[f64; 2]; 2],
}

impl GaussianPrior {
    pub fn new(mean: Point, cov: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = cov;
        let finite = [mean.x, mean.y, a, b, c, d].iter().all(|v| v.is_finite());
        if !finite || b != c || a <= 0.0 || a * d - b * c <= 0.0 {
            return Err(Error::invalid(format!(
                "prior covariance must be symmetric positive definite, got {cov:?}"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: Point, std: f64) -> Result<Self> {
        let v = std * std;
        Self::new(mean, [[v, 0.0], [0.0, v]])
    }

    pub fn mean(&self) -> Point {
        self.mean
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    pub fn log_density(&self, p: &Point) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = self.det();
        let (dx, dy) = (p.x - self.mean.x, p.y - self.mean.y);
        let quad = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
    }

    /// Draws a point with a standard-normal source `z` (called twice).
    pub fn sample(&self, mut z: impl FnMut() -> f64) -> Point {
        let [[a, b], [_, d]] = self.cov;
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).sqrt();
        let (z1, z2) = (z(), z());
        Point::new(self.mean.x + l11 * z1, self.mean.y + l21 * z1 + l22 * z2)
    }

    pub fn map(&self, grid: &RoomGrid) -> Result<LikelihoodMap> {
        let values = grid.nodes().map(|p| self.log_density(&p)).collect();
        LikelihoodMap::new(grid.clone(), values, MapKind::Prior)
    }
}

/// Prior centred on a drifted ground truth, as an inertial tracker would
/// supply: `N(truth + drift, std²·I)`.
pub fn imu_like_prior(ground_truth: Point, drift: (f64, f64), std: f64) -> Result<GaussianPrior> {
    GaussianPrior::isotropic(Point::new(ground_truth.x + drift.0, ground_truth.y + drift.1), std)
}

pub fn posterior_map(lik: &LikelihoodMap, prior: &GaussianPrior) -> Result<LikelihoodMap> {
    if lik.kind != MapKind::Likelihood {
        return Err(Error::invalid(format!("posterior needs a likelihood map, got {:?}", lik.kind)));
    }
    let values = lik
        .grid
        .nodes()
        .zip(&lik.log_values)
        .map(|(p, v)| v + prior.log_density(&p))
        .collect();
    LikelihoodMap::new(lik.grid.clone(), values, MapKind::Posterior)
}

/// Per-source GP predictions cached over every node of a grid, so that many
/// feature vectors can be scored against the same trained models.
#[derive(Clone, Debug)]
pub struct PredictiveField {
    grid: RoomGrid,
    /// Per source: predictive means per node.
    means: Vec<Vec<f64>>,
    /// Per source: `1 / v̂` per node.
    precisions: Vec<Vec<f64>>,
    /// Per node: `Σ_k −½ ln(2π v̂_k)`.
    normalizer: Vec<f64>,
}

impl PredictiveField {
    pub fn new(gps: &[GpModel], grid: &RoomGrid) -> Result<Self> {
        if gps.is_empty() {
            return Err(Error::invalid("at least one GP is required"));
        }
        if let Some(gp) = gps.iter().find(|gp| gp.input_dim() != 2) {
            return Err(Error::DimensionMismatch {
                what: "GP input dimension",
                expected: 2,
                got: gp.input_dim(),
            });
        }
        let nodes = grid.node_matrix();
        let mut normalizer = vec![0.0; grid.len()];
        let mut means = Vec::with_capacity(gps.len());
        let mut precisions = Vec::with_capacity(gps.len());
        for gp in gps {
            let preds = gp.predict_many(&nodes);
            for (acc, p) in normalizer.iter_mut().zip(&preds) {
                *acc -= 0.5 * (2.0 * std::f64::consts::PI * p.var).ln();
            }
            means.push(preds.iter().map(|p| p.mean).collect());
            precisions.push(preds.iter().map(|p| 1.0 / p.var).collect());
        }
        Ok(Self {
            grid: grid.clone(),
            means,
            precisions,
            normalizer,
        })
    }

    pub fn grid(&self) -> &RoomGrid {
        &self.grid
    }

    pub fn n_sources(&self) -> usize {
        self.means.len()
    }

    pub fn prediction(&self, source: usize, node: usize) -> Prediction {
        Prediction {
            mean: self.means[source][node],
            var: 1.0 / self.precisions[source][node],
        }
    }

    /// `Σ_k ln N(ψ_k | m̂_k(x), v̂_k(x))` at every node.
    pub fn log_likelihood(&self, features: &[f64]) -> Result<LikelihoodMap> {
        if features.len() != self.n_sources() {
            return Err(Error::DimensionMismatch {
                what: "feature length",
                expected: self.n_sources(),
                got: features.len(),
            });
        }
        let mut values = self.normalizer.clone();
        for ((psi, means), prec) in features.iter().zip(&self.means).zip(&self.precisions) {
            for ((v, m), p) in values.iter_mut().zip(means).zip(prec) {
                let d = psi - m;
                *v -= 0.5 * d * d * p;
            }
        }
        LikelihoodMap::new(self.grid.clone(), values, MapKind::Likelihood)
    }
}

pub fn likelihood_map(features: &FeatureVector, gps: &[GpModel], grid: &RoomGrid) -> Result<LikelihoodMap> {
    PredictiveField::new(gps, grid)?.log_likelihood(&features.values)
}

/// Fits one location GP per feature dimension on `(location, feature)` pairs.
pub fn fit_location_gps(
    locations: &[Point],
    features: &[Vec<f64>],
    config: &GpFitConfig,
) -> Result<Vec<GpModel>> {
    if locations.len() != features.len() {
        return Err(Error::DimensionMismatch {
            what: "training features",
            expected: locations.len(),
            got: features.len(),
        });
    }
    let k = features.first().map_or(0, Vec::len);
    if k == 0 || features.iter().any(|f| f.len() != k) {
        return Err(Error::invalid("training features must be non-empty and of equal length"));
    }
    let inputs = DMatrix::from_fn(locations.len(), 2, |i, j| {
        if j == 0 {
            locations[i].x
        } else {
            locations[i].y
        }
    });
    (0..k)
        .map(|dim| {
            let targets: Vec<f64> = features.iter().map(|f| f[dim]).collect();
            GpModel::fit(inputs.clone(), &targets, None, config)
        })
        .collect()
}

/// Location GPs with explicitly given parameters (no optimization).
pub fn condition_location_gps(
    locations: &[Point],
    features: &[Vec<f64>],
    params: &[KernelParams],
) -> Result<Vec<GpModel>> {
    let inputs = DMatrix::from_fn(locations.len(), 2, |i, j| {
        if j == 0 {
            locations[i].x
        } else {
            locations[i].y
        }
    });
    params
        .iter()
        .enumerate()
        .map(|(dim, p)| {
            let targets: Vec<f64> = features.iter().map(|f| f[dim]).collect();
            GpModel::with_params(inputs.clone(), &targets, *p)
        })
        .collect()
}

#[cfg(test)]
mod tests;
