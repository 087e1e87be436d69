use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBoundInputs {
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant.
    pub mu: f64,
    /// Per-client stochastic-gradient deviation.
    pub sigma: Vec<f64>,
    /// Bound on the expected squared gradient norm, as a norm.
    pub g: f64,
    /// Gradient-distance budget of the defense.
    pub epsilon: f64,
    /// Degree of heterogeneity across clients.
    pub gamma: f64,
    pub local_steps: usize,
    pub sampled: usize,
    pub rounds: usize,
    /// Client weights, summing to one.
    pub weights: Vec<f64>,
    /// Distance of the initial model to the optimum.
    pub init_distance: f64,
}

/// Upper bound on the expected optimality gap after `rounds` rounds.
pub fn convergence_bound(p: &ConvergenceBoundInputs) -> Result<f64> {
    let mut errs = Vec::new();
    if !(p.mu > 0.0) {
        errs.push(format!("mu must be > 0, got {}", p.mu));
    }
    if p.l < p.mu {
        errs.push(format!("L ({}) must be >= mu ({})", p.l, p.mu));
    }
    if p.sigma.len() != p.weights.len() {
        errs.push(format!("{} sigmas for {} weights", p.sigma.len(), p.weights.len()));
    }
    if p.sampled == 0 || p.local_steps == 0 {
        errs.push("sampled clients and local steps must be >= 1".into());
    }
    let nonneg = [p.g, p.epsilon, p.gamma, p.init_distance];
    if nonneg.iter().chain(&p.sigma).chain(&p.weights).any(|v| !(*v >= 0.0)) {
        errs.push("G, epsilon, gamma, sigmas, weights and distance must be non-negative".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let kappa = p.l / p.mu;
    let e = p.local_steps as f64;
    let eg = (p.epsilon + p.g).powi(2);
    let b = p
        .weights
        .iter()
        .zip(&p.sigma)
        .map(|(w, s)| w * w * (p.epsilon + s).powi(2))
        .sum::<f64>()
        + 6.0 * p.l * p.gamma
        + 8.0 * (e - 1.0).powi(2) * eg;
    let c = 4.0 / p.sampled as f64 * e * e * eg;
    Ok(2.0 * kappa / (p.mu + p.rounds as f64) * ((b + c) / p.mu + 2.0 * p.l * p.init_distance.powi(2)))
}

/// First-layer gradient norms for real and pseudo data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Inputs {
    /// `||dW' - dW||`.
    pub weight_gap: f64,
    /// `||db' - db||`.
    pub bias_gap: f64,
    /// Observed `||db||` and `||db'||`.
    pub bias_norm: f64,
    pub pseudo_bias_norm: f64,
    /// Assumed bound on the bias-gradient norm.
    pub m: f64,
    /// Measured `||x' - x||`.
    pub input_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Outcome {
    pub lower_bound: f64,
    pub input_distance: f64,
    pub holds: bool,
}

pub const THEOREM3_SLACK: f64 = 1e-9;

/// Lower bound on the input distance implied by the first-layer gradient
/// gap, and whether the measured distance respects it.
pub fn theorem3_check(p: &Theorem3Inputs) -> Result<Theorem3Outcome> {
    let observed = p.bias_norm.max(p.pseudo_bias_norm);
    if !(p.m >= observed) {
        return Err(Error::Invalid(format!(
            "bias-gradient bound M = {} is below the observed norm {observed}",
            p.m
        )));
    }
    let denom = 2.0 * p.m + p.bias_gap;
    let lower_bound = if denom > 0.0 {
        2.0 * (p.weight_gap - p.bias_gap) / denom
    } else {
        // All bias gradients vanish; the bound degenerates.
        0.0
    };
    Ok(Theorem3Outcome {
        lower_bound,
        input_distance: p.input_distance,
        holds: p.input_distance >= lower_bound - THEOREM3_SLACK,
    })
}
