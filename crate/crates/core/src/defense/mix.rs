//! Sample mixing: convex combinations of rows plus random reflections.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub k: usize,
    pub flip_prob: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { k: 2, flip_prob: 0.5 }
    }
}

/// Each output row mixes `k` distinct random rows with Dirichlet(1)
/// weights (features and labels alike), then reflects each feature
/// `v -> 1 - v` with probability `flip_prob`.
pub fn mix_transform(x: &Tensor, y: &Tensor, cfg: &MixConfig, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    let m = x.rows();
    if cfg.k == 0 || cfg.k > m {
        return Err(Error::Invalid(format!(
            "mix needs 1 <= k <= batch ({m}), got k = {}",
            cfg.k
        )));
    }
    let (d, n) = (x.cols(), y.cols());
    let mut xo = Tensor::zeros(&[m, d]);
    let mut yo = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let picks = sample(rng, m, cfg.k);
        // Dirichlet(1, ..., 1) as normalized unit exponentials.
        let mut w: Vec<f64> = (0..cfg.k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        for (src, wi) in picks.iter().zip(&w) {
            for (o, v) in xo.row_mut(i).iter_mut().zip(x.row(src)) {
                *o += wi * v;
            }
            for (o, v) in yo.row_mut(i).iter_mut().zip(y.row(src)) {
                *o += wi * v;
            }
        }
        for v in xo.row_mut(i) {
            *v = v.clamp(0.0, 1.0);
            if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
                *v = 1.0 - *v;
            }
        }
    }
    Ok((xo, yo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn batch() -> (Tensor, Tensor) {
        let x = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let y = Tensor::matrix(4, 2, vec![1., 0., 0., 1., 1., 0., 0., 1.]).unwrap();
        (x, y)
    }

    #[test]
    fn k1_no_flip_picks_rows() {
        let (x, y) = batch();
        let (xo, _) = mix_transform(&x, &y, &MixConfig { k: 1, flip_prob: 0.0 }, &mut stream(1, &[])).unwrap();
        for i in 0..4 {
            assert!((0..4).any(|j| xo.row(i) == x.row(j)));
        }
    }

    #[test]
    fn convexity() {
        let (x, y) = batch();
        let (xo, yo) = mix_transform(&x, &y, &MixConfig { k: 3, flip_prob: 0.3 }, &mut stream(2, &[])).unwrap();
        assert!(xo.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..4 {
            assert!((yo.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn k_too_large() {
        let (x, y) = batch();
        assert!(mix_transform(&x, &y, &MixConfig { k: 5, flip_prob: 0.0 }, &mut stream(2, &[])).is_err());
    }
}
