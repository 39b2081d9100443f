//! Gaussian-process regression with a scaled RBF kernel.
//!
//! One GP is trained per landmark feature. Kernel hyperparameters are fitted
//! by Adam ascent on the log marginal likelihood, working on unconstrained
//! softplus coordinates so that `θ > 0`, `σ² > 0` and `γ ≥ γ_min` hold
//! throughout.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod optim;
pub use optim::{softplus, softplus_inverse, Reparam};


const LN_2PI: f64 = 1.837_877_066_409_345_5;
const BASE_JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-2;
/// Query rows evaluated per block in batched prediction.
const PREDICT_BLOCK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    /// Signal variance θ.
    pub theta: f64,
    /// Length scale γ, in input units.
    pub gamma: f64,
    /// Observation noise variance σ².
    pub noise_var: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.theta) && ok(self.gamma) && ok(self.noise_var)) {
            return Err(Error::invalid(format!("kernel parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Heuristic start: θ = target variance, γ = 5, σ² = 0.1·θ.
    pub fn initial_guess(centered_targets: &[f64]) -> Self {
        let n = centered_targets.len().max(1) as f64;
        let var = centered_targets.iter().map(|v| v * v).sum::<f64>() / n;
        let theta = if var > 1e-12 { var } else { 1.0 };
        Self {
            theta,
            gamma: 5.0,
            noise_var: 0.1 * theta,
        }
    }
}

/// `θ·exp(−‖a−b‖²/(2γ²))`.
pub fn kernel(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    p.theta * (-sq_dist(a, b) / (2.0 * p.gamma * p.gamma)).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpFitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Lower bound on γ; 0 leaves γ unconstrained beyond positivity.
    pub gamma_min: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 100,
            gamma_min: 3.0,
        }
    }
}

impl GpFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("gp.learning_rate must be positive".into()));
        }
        if !(self.gamma_min >= 0.0 && self.gamma_min.is_finite()) {
            return Err(Error::Config("gp.gamma_min must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// Log marginal likelihood and its gradient with respect to `(θ, γ, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evidence {
    pub value: f64,
    pub grad: [f64; 3],
}

/// Training inputs as rows of an `N × D` matrix.
pub fn inputs_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("input rows have inconsistent dimensions"));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

struct Factorized {
    chol: Cholesky<f64, Dyn>,
    rbf: DMatrix<f64>,
    jitter: f64,
}

fn rbf_matrix(inputs: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let n = inputs.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| inputs.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = p.theta;
        for j in 0..i {
            let v = kernel(&rows[i], &rows[j], p);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K + (σ² + j·(θ+σ²))·I`, escalating the relative jitter `j`
/// by ×10 from 1e-8 up to 1e-2.
fn factorize(inputs: &DMatrix<f64>, p: &KernelParams) -> Result<Factorized> {
    let rbf = rbf_matrix(inputs, p);
    let mean_diag = p.theta + p.noise_var;
    let mut jitter = BASE_JITTER;
    loop {
        let mut c = rbf.clone();
        c.fill_diagonal(p.theta + p.noise_var + jitter * mean_diag);
        if let Some(chol) = Cholesky::new(c) {
            return Ok(Factorized { chol, rbf, jitter });
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter *= 10.0;
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log marginal likelihood of zero-mean `targets` at `inputs`, with its
/// analytic gradient.
pub fn log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    targets: &[f64],
    p: &KernelParams,
) -> Result<Evidence> {
    p.validate()?;
    let n = inputs.nrows();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            what: "GP targets",
            expected: n,
            got: targets.len(),
        });
    }
    let f = factorize(inputs, p)?;
    let y = DVector::from_column_slice(targets);
    let alpha = f.chol.solve(&y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det(&f.chol) - 0.5 * n as f64 * LN_2PI;

    let inv = f.chol.inverse();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| inputs.row(i).iter().copied().collect()).collect();
    let gamma3 = p.gamma.powi(3);
    let (mut g_theta, mut g_gamma, mut trace_m) = (0.0, 0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let m = alpha[i] * alpha[j] - inv[(i, j)];
            let k = f.rbf[(i, j)];
            g_theta += m * k;
            if i != j {
                g_gamma += m * k * sq_dist(&rows[i], &rows[j]);
            }
        }
        trace_m += alpha[j] * alpha[j] - inv[(j, j)];
    }
    let grad = [
        0.5 * (g_theta / p.theta + f.jitter * trace_m),
        0.5 * g_gamma / gamma3,
        0.5 * (1.0 + f.jitter) * trace_m,
    ];
    Ok(Evidence { value, grad })
}

/// A fitted GP over inputs in `R^D`.
#[derive(Clone, Debug)]
pub struct GpModel {
    params: KernelParams,
    inputs: DMatrix<f64>,
    targets: Vec<f64>,
    target_mean: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Conditions on data with fixed hyperparameters; targets are centered
    /// by their mean.
    pub fn with_params(inputs: DMatrix<f64>, targets: &[f64], params: KernelParams) -> Result<Self> {
        params.validate()?;
        if inputs.nrows() < 2 {
            return Err(Error::invalid("a GP needs at least two training points"));
        }
        if targets.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                what: "GP targets",
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("GP training data must be finite"));
        }
        let target_mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let centered = DVector::from_iterator(targets.len(), targets.iter().map(|t| t - target_mean));
        let f = factorize(&inputs, &params)?;
        let alpha = f.chol.solve(&centered);
        Ok(Self {
            params,
            inputs,
            targets: targets.to_vec(),
            target_mean,
            jitter: f.jitter,
            chol: f.chol,
            alpha,
        })
    }

    /// Maximizes the log marginal likelihood with Adam, starting from `init`
    /// (or [`KernelParams::initial_guess`]). The best parameters visited,
    /// including the start, are kept.
    pub fn fit(
        inputs: DMatrix<f64>,
        targets: &[f64],
        init: Option<KernelParams>,
        config: &GpFitConfig,
    ) -> Result<Self> {
        config.validate()?;
        if inputs.nrows() < 2 {
            return Err(Error::invalid("a GP needs at least two training points"));
        }
        if targets.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                what: "GP targets",
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let centered: Vec<f64> = targets.iter().map(|t| t - mean).collect();
        let mut init = init.unwrap_or_else(|| KernelParams::initial_guess(&centered));
        if init.gamma <= config.gamma_min {
            init.gamma = config.gamma_min + 1e-3;
        }
        let params = optim::maximize_evidence(&inputs, &centered, init, config)?;
        Self::with_params(inputs, targets, params)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    /// Relative diagonal jitter `j` used in the factorization; the diagonal
    /// carries `σ² + j·(θ+σ²)`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Log marginal likelihood of the centered training targets.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let centered: Vec<f64> = self.targets.iter().map(|t| t - self.target_mean).collect();
        Ok(log_marginal_likelihood(&self.inputs, &centered, &self.params)?.value)
    }

    fn cross_kernel(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n_train(),
            self.inputs.row_iter().map(|r| {
                let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                self.params.theta * (-d / (2.0 * self.params.gamma * self.params.gamma)).exp()
            }),
        )
    }

    fn prior_var(&self) -> f64 {
        self.params.theta + self.params.noise_var
    }

    fn clamp_var(&self, var: f64) -> f64 {
        var.max(1e-12 * self.prior_var())
    }

    /// Predictive mean and variance (including observation noise) at `x`.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        debug_assert_eq!(x.len(), self.input_dim());
        let ks = self.cross_kernel(x);
        let mean = self.target_mean + ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        Prediction {
            mean,
            var: self.clamp_var(self.prior_var() - v.norm_squared()),
        }
    }

    /// Batched [`GpModel::predict`] over the rows of `queries` (`M × D`).
    pub fn predict_many(&self, queries: &DMatrix<f64>) -> Vec<Prediction> {
        let n = self.n_train();
        let l_inv = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        let scale = -1.0 / (2.0 * self.params.gamma * self.params.gamma);
        let mut out = Vec::with_capacity(queries.nrows());
        let mut start = 0;
        while start < queries.nrows() {
            let m = PREDICT_BLOCK.min(queries.nrows() - start);
            // N × m cross-covariance block
            let ks = DMatrix::from_fn(n, m, |i, j| {
                let d: f64 = (0..queries.ncols())
                    .map(|c| {
                        let diff = self.inputs[(i, c)] - queries[(start + j, c)];
                        diff * diff
                    })
                    .sum();
                self.params.theta * (d * scale).exp()
            });
            let means = ks.tr_mul(&self.alpha);
            let v = &l_inv * &ks;
            for j in 0..m {
                let q = v.column(j).norm_squared();
                out.push(Prediction {
                    mean: self.target_mean + means[j],
                    var: self.clamp_var(self.prior_var() - q),
                });
            }
            start += m;
        }
        out
    }

    /// `ln N(value | m̂(x), v̂(x))`.
    pub fn log_density(&self, x: &[f64], value: f64) -> f64 {
        gaussian_log_density(value, self.predict(x))
    }
}

pub fn gaussian_log_density(value: f64, p: Prediction) -> f64 {
    let d = value - p.mean;
    -0.5 * (2.0 * PI * p.var).ln() - d * d / (2.0 * p.var)
}

#[cfg(test)]
mod tests;
