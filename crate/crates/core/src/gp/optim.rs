use nalgebra::DMatrix;

use super::{log_marginal_likelihood, GpFitConfig, KernelParams};
use crate::error::Result;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps unconstrained `u ∈ R³` to `(θ, γ, σ²) = (sp(u₀), γ_min + sp(u₁), sp(u₂))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reparam {
    pub gamma_min: f64,
}

impl Reparam {
    pub fn params(&self, u: [f64; 3]) -> KernelParams {
        KernelParams {
            theta: softplus(u[0]),
            gamma: self.gamma_min + softplus(u[1]),
            noise_var: softplus(u[2]),
        }
    }

    pub fn unconstrained(&self, p: &KernelParams) -> [f64; 3] {
        [
            softplus_inverse(p.theta),
            softplus_inverse(p.gamma - self.gamma_min),
            softplus_inverse(p.noise_var),
        ]
    }

    /// Chain rule from a gradient in `(θ, γ, σ²)` to one in `u`.
    pub fn pull_back(&self, u: [f64; 3], grad: [f64; 3]) -> [f64; 3] {
        [grad[0] * sigmoid(u[0]), grad[1] * sigmoid(u[1]), grad[2] * sigmoid(u[2])]
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam ascent on the log marginal likelihood in unconstrained coordinates.
pub(super) fn maximize_evidence(
    inputs: &DMatrix<f64>,
    centered: &[f64],
    init: KernelParams,
    config: &GpFitConfig,
) -> Result<KernelParams> {
    let reparam = Reparam {
        gamma_min: config.gamma_min,
    };
    let mut u = reparam.unconstrained(&init);
    let mut m = [0.0; 3];
    let mut v = [0.0; 3];
    let mut best = (f64::NEG_INFINITY, init);
    for step in 1..=config.iterations + 1 {
        let params = reparam.params(u);
        let evidence = log_marginal_likelihood(inputs, centered, &params)?;
        if evidence.value > best.0 {
            best = (evidence.value, params);
        }
        if step > config.iterations {
            break;
        }
        let g = reparam.pull_back(u, evidence.grad);
        let t = step as i32;
        for i in 0..3 {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / (1.0 - BETA1.powi(t));
            let v_hat = v[i] / (1.0 - BETA2.powi(t));
            u[i] += config.learning_rate * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(best.1)
}
