use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{GradientVector, LayerParams, ModelParams};
use crate::autodiff::{sigmoid, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Identity => t.clone(),
            Activation::Relu => t.map(|v| v.max(0.0)),
            Activation::Sigmoid => t.map(sigmoid),
        }
    }

    fn apply_graph(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Parameter handles of an MLP bound into a graph, `(weight, bias)` per layer.
pub type BoundParams = Vec<(NodeId, NodeId)>;

/// Dense feed-forward network: `hidden` after every layer but the last,
/// `output` after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub params: ModelParams,
}

impl Mlp {
    /// Layers initialised from uniform(-1/sqrt(in), 1/sqrt(in)).
    pub fn init(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Invalid(format!("bad layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let k = 1.0 / (fan_in as f64).sqrt();
                let wd = (0..fan_in * fan_out).map(|_| uniform(rng, -k, k)).collect();
                let bd = (0..fan_out).map(|_| uniform(rng, -k, k)).collect();
                LayerParams {
                    weight: Tensor::new(vec![fan_out, fan_in], wd).expect("sized"),
                    bias: Tensor::vector(bd),
                }
            })
            .collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            hidden,
            output,
            params: ModelParams::new(layers),
        })
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| LayerParams {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Mlp {
            dims: dims.to_vec(),
            hidden,
            output,
            params: ModelParams::new(layers),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_input",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        Ok(())
    }

    /// Plain evaluation for a batch `x[m, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = self.params.layers.len();
        let mut h = x.clone();
        for (i, l) in self.params.layers.iter().enumerate() {
            h = h.matmul(&l.weight.transpose()?)?.add_row(&l.bias)?;
            let act = if i + 1 == n { self.output } else { self.hidden };
            h = act.apply(&h);
        }
        Ok(h)
    }

    /// Adds the parameters to `g` as source nodes.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        self.params
            .layers
            .iter()
            .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
            .collect()
    }

    pub fn forward_graph(&self, g: &mut Graph, params: &[(NodeId, NodeId)], x: NodeId) -> Result<NodeId> {
        self.check_input(g.value(x))?;
        let n = params.len();
        let mut h = x;
        for (i, &(w, b)) in params.iter().enumerate() {
            h = g.linear(h, w, b)?;
            let act = if i + 1 == n { self.output } else { self.hidden };
            h = act.apply_graph(g, h)?;
        }
        Ok(h)
    }

    pub fn set_from_tensors(&mut self, ts: Vec<Tensor>) -> Result<()> {
        let p = ModelParams::from_tensors(ts)?;
        if !p.same_architecture(&self.params) {
            return Err(Error::Architecture("parameter shapes differ".into()));
        }
        self.params = p;
        Ok(())
    }
}

/// Flattens bound parameter handles to `[w0, b0, w1, b1, ...]`.
pub fn flat_handles(params: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    params.iter().flat_map(|&(w, b)| [w, b]).collect()
}

pub fn gradient_from_tensors(ts: Vec<Tensor>) -> Result<GradientVector> {
    GradientVector::from_tensors(ts)
}

/// Numerically stable `log(1 + exp(z))` built from graph primitives.
pub fn softplus_graph(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let pos = g.relu(z)?;
    let a = g.abs(z)?;
    let na = g.neg(a)?;
    let e = g.exp(na)?;
    let e1 = g.add_scalar(e, 1.0)?;
    let l = g.log(e1)?;
    g.add(pos, l)
}
