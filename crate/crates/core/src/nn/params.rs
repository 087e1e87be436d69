use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight `[out, in]` and bias `[out]` of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

macro_rules! layered {
    ($name:ident) => {
        impl $name {
            pub fn new(layers: Vec<LayerParams>) -> Self {
                $name { layers }
            }

            pub fn zeros_like(shapes: &[LayerParams]) -> Self {
                $name {
                    layers: shapes
                        .iter()
                        .map(|l| LayerParams {
                            weight: Tensor::zeros(l.weight.shape()),
                            bias: Tensor::zeros(l.bias.shape()),
                        })
                        .collect(),
                }
            }

            /// Tensors in `[w0, b0, w1, b1, ...]` order.
            pub fn tensors(&self) -> Vec<&Tensor> {
                self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
            }

            pub fn to_tensors(&self) -> Vec<Tensor> {
                self.tensors().into_iter().cloned().collect()
            }

            pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
                if ts.len() % 2 != 0 {
                    return Err(Error::Architecture(format!(
                        "expected weight/bias pairs, got {} tensors",
                        ts.len()
                    )));
                }
                let mut it = ts.into_iter();
                let mut layers = Vec::new();
                while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
                    layers.push(LayerParams { weight, bias });
                }
                Ok($name { layers })
            }

            pub fn num_params(&self) -> usize {
                self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
            }

            pub fn flatten(&self) -> Vec<f64> {
                let mut out = Vec::with_capacity(self.num_params());
                for t in self.tensors() {
                    out.extend_from_slice(t.data());
                }
                out
            }

            /// Refills tensors of the same architecture from a flat vector.
            pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
                if flat.len() != self.num_params() {
                    return Err(Error::Shape {
                        op: "unflatten",
                        lhs: vec![self.num_params()],
                        rhs: vec![flat.len()],
                    });
                }
                let mut off = 0;
                let mut ts = Vec::new();
                for t in self.tensors() {
                    let n = t.len();
                    ts.push(Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec())?);
                    off += n;
                }
                Self::from_tensors(ts)
            }

            pub fn same_architecture(&self, other: &Self) -> bool {
                self.layers.len() == other.layers.len()
                    && self
                        .layers
                        .iter()
                        .zip(&other.layers)
                        .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape())
            }

            pub fn max_abs(&self) -> f64 {
                self.tensors().iter().fold(0.0, |m, t| m.max(t.max_abs()))
            }

            pub fn l2_norm(&self) -> f64 {
                self.tensors()
                    .iter()
                    .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt()
            }

            pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
                $name {
                    layers: self
                        .layers
                        .iter()
                        .map(|l| LayerParams {
                            weight: l.weight.map(&f),
                            bias: l.bias.map(&f),
                        })
                        .collect(),
                }
            }

            pub fn first_non_finite(&self) -> Option<(usize, usize)> {
                self.tensors()
                    .iter()
                    .enumerate()
                    .find_map(|(i, t)| t.first_non_finite().map(|j| (i, j)))
            }
        }
    };
}

/// Parameters of a dense network, houses the model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

/// A gradient snapshot with the same layer layout as the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub layers: Vec<LayerParams>,
}

layered!(ModelParams);
layered!(GradientVector);

impl GradientVector {
    pub fn distance(&self, other: &GradientVector) -> Result<f64> {
        if !self.same_architecture(other) {
            return Err(Error::Architecture("gradient layouts differ".into()));
        }
        let a = self.flatten();
        let b = other.flatten();
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    }

    pub fn scale(&self, c: f64) -> GradientVector {
        self.map(|v| v * c)
    }
}

impl ModelParams {
    /// `self - lr * grad`, layer by layer.
    pub fn sgd_step(&mut self, grad: &GradientVector, lr: f64) -> Result<()> {
        if self.layers.len() != grad.layers.len() {
            return Err(Error::Architecture("gradient does not match model".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (p, gv) in [(&mut l.weight, &g.weight), (&mut l.bias, &g.bias)] {
                if p.shape() != gv.shape() {
                    return Err(Error::Shape {
                        op: "sgd_step",
                        lhs: p.shape().to_vec(),
                        rhs: gv.shape().to_vec(),
                    });
                }
                for (pv, &d) in p.data_mut().iter_mut().zip(gv.data()) {
                    *pv -= lr * d;
                }
            }
        }
        Ok(())
    }
}
