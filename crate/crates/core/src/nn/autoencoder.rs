//! Reconstruction-error anomaly detector.
//!
//! A single `[dim, dim/2, dim]` autoencoder trained on benign rows; a row is
//! flagged when its RMSE reconstruction error exceeds a calibrated threshold.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{flat_handles, Activation, BoundParams, Mlp};
use crate::autodiff::{AdamState, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAutoencoder {
    pub net: Mlp,
    pub threshold: f64,
}

impl AnomalyAutoencoder {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = (dim / 2).max(1);
        let net = Mlp::init(&[dim, hidden, dim], Activation::Relu, Activation::Identity, rng)?;
        Ok(AnomalyAutoencoder {
            net,
            threshold: f64::INFINITY,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    /// Per-row RMSE between the input and its reconstruction.
    pub fn anomaly_score(&self, x: &Tensor) -> Result<Vec<f64>> {
        let r = self.reconstruct(x)?;
        Ok(rmse_rows(x, &r))
    }

    /// True for rows scored below the threshold, i.e. accepted as benign.
    pub fn accepts(&self, x: &Tensor) -> Result<Vec<bool>> {
        Ok(self.anomaly_score(x)?.into_iter().map(|s| s < self.threshold).collect())
    }

    /// Sum over rows of the per-row RMSE, as a graph node. A tiny floor
    /// inside the square root keeps the derivative finite at zero error.
    pub fn score_graph(&self, g: &mut Graph, params: &BoundParams, x: NodeId) -> Result<NodeId> {
        let dim = g.value(x).cols() as f64;
        let r = self.net.forward_graph(g, params, x)?;
        let d = g.sub(x, r)?;
        let sq = g.mul(d, d)?;
        let row = g.sum_cols(sq)?;
        let ms = g.scale(row, 1.0 / dim)?;
        let ms = g.add_scalar(ms, 1e-18)?;
        let rm = g.sqrt(ms)?;
        g.sum(rm)
    }

    /// Minibatch Adam on mean squared reconstruction error.
    pub fn train(&mut self, benign: &Tensor, epochs: usize, batch: usize, lr: f64, rng: &mut impl Rng) -> Result<()> {
        if benign.rows() == 0 {
            return Err(Error::Empty("benign training set".into()));
        }
        let mut params = self.net.params.to_tensors();
        let mut adam = AdamState::for_tensors(&params);
        let mut idx: Vec<usize> = (0..benign.rows()).collect();
        for _ in 0..epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(batch.max(1)) {
                let xb = benign.select_rows(chunk);
                let mut g = Graph::new();
                let p = self.net.bind(&mut g);
                let xn = g.constant(xb);
                let r = self.net.forward_graph(&mut g, &p, xn)?;
                let d = g.sub(xn, r)?;
                let sq = g.mul(d, d)?;
                let l = g.mean(sq)?;
                let grads = g.gradients(l, &flat_handles(&p))?;
                adam.step(&mut params, &grads, lr)?;
                self.net.set_from_tensors(params.clone())?;
            }
        }
        Ok(())
    }

    /// Sets the threshold to the given quantile of the benign scores.
    pub fn calibrate_threshold(&mut self, benign: &Tensor, quantile: f64) -> Result<f64> {
        if benign.rows() == 0 {
            return Err(Error::Empty("benign calibration set".into()));
        }
        let scores = self.anomaly_score(benign)?;
        self.threshold = quantile_of(&scores, quantile);
        Ok(self.threshold)
    }
}

pub fn rmse_rows(x: &Tensor, r: &Tensor) -> Vec<f64> {
    let n = x.cols().max(1);
    x.data()
        .chunks(n)
        .zip(r.data().chunks(n))
        .map(|(a, b)| (a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n as f64).sqrt())
        .collect()
}

/// Linear-interpolated empirical quantile; `q = 1` is the maximum.
pub fn quantile_of(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = q.clamp(0.0, 1.0);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn perfect_reconstruction_scores_zero() {
        let x = Tensor::matrix(1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        assert_eq!(rmse_rows(&x, &x), vec![0.0]);
    }

    #[test]
    fn quantile_one_is_max() {
        let v = [0.3, 0.9, 0.1, 0.5];
        assert_eq!(quantile_of(&v, 1.0), 0.9);
        assert_eq!(quantile_of(&v, 0.0), 0.1);
    }

    #[test]
    fn empty_benign_set_rejected() {
        let mut rng = stream(0, &[]);
        let mut ae = AnomalyAutoencoder::new(4, &mut rng).unwrap();
        assert!(matches!(
            ae.calibrate_threshold(&Tensor::zeros(&[0, 4]), 0.99),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn scores_are_row_permutation_equivariant() {
        let mut rng = stream(5, &[]);
        let ae = AnomalyAutoencoder::new(4, &mut rng).unwrap();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.13).fract()).collect()).unwrap();
        let s = ae.anomaly_score(&x).unwrap();
        let xp = x.select_rows(&[2, 0, 1]);
        let sp = ae.anomaly_score(&xp).unwrap();
        assert_eq!(sp, vec![s[2], s[0], s[1]]);
    }
}
