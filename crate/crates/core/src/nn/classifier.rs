use rand::seq::SliceRandom;
use rand::Rng;

use super::mlp::{flat_handles, Activation, BoundParams, Mlp};
use super::params::GradientVector;
use crate::autodiff::{AdamState, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Soft-target cross entropy `-sum(y * log_softmax(z)) / batch`.
///
/// `y` rows may be arbitrary real vectors.
pub fn ce_loss_graph(g: &mut Graph, logits: NodeId, y: NodeId) -> Result<NodeId> {
    let batch = g.value(logits).rows().max(1) as f64;
    let ls = g.log_softmax_rows(logits)?;
    let prod = g.mul(y, ls)?;
    let s = g.sum(prod)?;
    g.scale(s, -1.0 / batch)
}

/// The global NIDS model: `[dim, 2*dim, 3*dim, n]` with ReLU hidden layers
/// and a softmax read-out.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpClassifier {
    pub net: Mlp,
}

impl MlpClassifier {
    pub fn layer_dims(dim: usize, n_classes: usize) -> Vec<usize> {
        vec![dim, 2 * dim, 3 * dim, n_classes]
    }

    pub fn new(dim: usize, n_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let net = Mlp::init(
            &Self::layer_dims(dim, n_classes),
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Ok(MlpClassifier { net })
    }

    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        MlpClassifier {
            net: Mlp::zeros(
                &Self::layer_dims(dim, n_classes),
                Activation::Relu,
                Activation::Identity,
            ),
        }
    }

    pub fn from_mlp(net: Mlp) -> Self {
        MlpClassifier { net }
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    /// Class probabilities, one row per input row.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)?.softmax_rows()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }

    pub fn accuracy(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        let pred = self.predict(x)?;
        let truth = y.argmax_rows();
        if pred.is_empty() {
            return Ok(0.0);
        }
        let hits = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / pred.len() as f64)
    }

    fn check_targets(&self, x: &Tensor, y: &Tensor) -> Result<()> {
        if y.shape().len() != 2 || y.rows() != x.rows() || y.cols() != self.n_classes() {
            return Err(Error::Shape {
                op: "ce_loss",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn ce_loss(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        self.check_targets(x, y)?;
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let p = self.net.bind(&mut g);
        let z = self.net.forward_graph(&mut g, &p, xn)?;
        let l = ce_loss_graph(&mut g, z, yn)?;
        Ok(g.value(l).item())
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, x: &Tensor, y: &Tensor) -> Result<(f64, GradientVector)> {
        self.check_targets(x, y)?;
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let p = self.net.bind(&mut g);
        let z = self.net.forward_graph(&mut g, &p, xn)?;
        let l = ce_loss_graph(&mut g, z, yn)?;
        let loss = g.value(l).item();
        let grads = g.gradients(l, &flat_handles(&p))?;
        Ok((loss, GradientVector::from_tensors(grads)?))
    }

    pub fn gradient(&self, x: &Tensor, y: &Tensor) -> Result<GradientVector> {
        Ok(self.loss_and_gradient(x, y)?.1)
    }

    /// Parameter gradient of the loss at `(x, y)` as differentiable graph
    /// nodes, `[w0, b0, w1, b1, ...]`.
    pub fn gradient_nodes(&self, g: &mut Graph, params: &BoundParams, x: NodeId, y: NodeId) -> Result<Vec<NodeId>> {
        self.check_targets(g.value(x), g.value(y))?;
        let z = self.net.forward_graph(g, params, x)?;
        let l = ce_loss_graph(g, z, y)?;
        g.grad(l, &flat_handles(params), true)
    }

    /// Centralised minibatch Adam training; used as a reference baseline.
    pub fn fit(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        epochs: usize,
        batch: usize,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        self.check_targets(x, y)?;
        let mut params = self.net.params.to_tensors();
        let mut adam = AdamState::for_tensors(&params);
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        for _ in 0..epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(batch.max(1)) {
                let xb = x.select_rows(chunk);
                let yb = y.select_rows(chunk);
                let grad = self.gradient(&xb, &yb)?;
                adam.step(&mut params, &grad.to_tensors(), lr)?;
                self.net.set_from_tensors(params.clone())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rows_sum_to_one() {
        let mut rng = stream(3, &[]);
        let c = MlpClassifier::new(5, 3, &mut rng).unwrap();
        let x = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64 * 0.37).fract()).collect()).unwrap();
        let p = c.classify(&x).unwrap();
        for i in 0..4 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let c = MlpClassifier::zeros(4, 4);
        let p = c.classify(&Tensor::full(&[2, 4], 0.3)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn uniform_logits_loss_is_ln_n() {
        let c = MlpClassifier::zeros(3, 4);
        let x = Tensor::full(&[1, 3], 0.5);
        let y = Tensor::matrix(1, 4, vec![0., 1., 0., 0.]).unwrap();
        assert!((c.ce_loss(&x, &y).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_target_loss_is_zero() {
        let mut rng = stream(3, &[]);
        let c = MlpClassifier::new(3, 4, &mut rng).unwrap();
        let x = Tensor::full(&[2, 3], 0.5);
        assert_eq!(c.ce_loss(&x, &Tensor::zeros(&[2, 4])).unwrap(), 0.0);
    }

    #[test]
    fn peaked_logits_loss_near_zero() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::matrix(1, 3, vec![10.0, 0.0, 0.0]).unwrap());
        let y = g.leaf(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap());
        let l = ce_loss_graph(&mut g, z, y).unwrap();
        assert!(g.value(l).item() < 0.01);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_target() {
        let zt = Tensor::matrix(2, 4, vec![0.3, -1.2, 2.0, 0.1, 1.5, 0.2, -0.4, 0.9]).unwrap();
        let yt = Tensor::matrix(2, 4, vec![0., 0., 1., 0., 1., 0., 0., 0.]).unwrap();
        let mut g = Graph::new();
        let z = g.leaf(zt.clone());
        let y = g.leaf(yt.clone());
        let l = ce_loss_graph(&mut g, z, y).unwrap();
        let d = g.gradients(l, &[z]).unwrap().remove(0);
        let expect = zt.softmax_rows().unwrap().sub(&yt).unwrap().scale(0.5);
        for (a, b) in d.data().iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
