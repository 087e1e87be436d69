//! Gradient-level defenses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::GradientVector;
use crate::rng::laplace;

/// How the configured `variance` maps to the Laplace scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReading {
    /// `variance` is the noise variance: scale `sqrt(variance / 2)`.
    #[default]
    Variance,
    /// `variance` is used directly as the Laplace scale.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpConfig {
    pub location: f64,
    pub variance: f64,
    pub reading: NoiseReading,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            location: 0.0,
            variance: 0.1,
            reading: NoiseReading::Variance,
        }
    }
}

impl DpConfig {
    pub fn scale(&self) -> f64 {
        match self.reading {
            NoiseReading::Variance => (self.variance / 2.0).sqrt(),
            NoiseReading::Scale => self.variance,
        }
    }
}

/// Adds i.i.d. Laplace noise to every entry, in flattened order.
pub fn dp_perturb_flat(g: &[f64], cfg: &DpConfig, rng: &mut impl Rng) -> Vec<f64> {
    let b = cfg.scale();
    g.iter().map(|v| v + cfg.location + laplace(rng, b)).collect()
}

pub fn dp_perturb(g: &GradientVector, cfg: &DpConfig, rng: &mut impl Rng) -> GradientVector {
    let flat = dp_perturb_flat(&g.flatten(), cfg, rng);
    g.unflatten_like(&flat).expect("same length")
}

/// Zeroes the `floor(rate * len)` entries of smallest magnitude; ties go
/// to the lower index.
pub fn gp_prune_flat(g: &[f64], rate: f64) -> Vec<f64> {
    let k = ((rate.clamp(0.0, 1.0)) * g.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(a.cmp(&b)));
    let mut out = g.to_vec();
    for &i in &order[..k.min(g.len())] {
        out[i] = 0.0;
    }
    out
}

/// Pruning with one global magnitude ranking across all layers.
pub fn gp_prune(g: &GradientVector, rate: f64) -> GradientVector {
    let flat = gp_prune_flat(&g.flatten(), rate);
    g.unflatten_like(&flat).expect("same length")
}
