//! FedDef: replace a private batch by pseudo data whose gradient stays
//! close to the real one while the inputs move away and the true label
//! becomes the smallest pseudo-label entry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{GradientVector, MlpClassifier};
use crate::rng::uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedDefConfig {
    /// Weight of the gradient-fidelity term.
    pub alpha: f64,
    /// Input-distance target.
    pub delta: f64,
    /// Tolerated gradient distance.
    pub epsilon: f64,
    /// Adam step size of the transform itself; the defense entry's `lr`
    /// is the client's training rate.
    #[serde(rename = "transform_lr")]
    pub lr: f64,
    pub steps: usize,
    /// Stop as soon as every pseudo-gradient entry is this small.
    pub g_value: f64,
}

impl Default for FedDefConfig {
    fn default() -> Self {
        FedDefConfig {
            alpha: 1.0,
            delta: 1.0,
            epsilon: 0.0,
            lr: 0.2,
            steps: 40,
            g_value: 1e-15,
        }
    }
}

impl FedDefConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0) {
            errs.push(format!("feddef alpha must be > 0, got {}", self.alpha));
        }
        if !(self.delta > 0.0) {
            errs.push(format!("feddef delta must be > 0, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0) {
            errs.push(format!("feddef epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.steps == 0 {
            errs.push("feddef steps must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedDefOutput {
    pub x: Tensor,
    pub y: Tensor,
    /// Gradient of the loss at the returned pseudo batch; this is what the
    /// client shares.
    pub gradient: GradientVector,
    /// Optimizer steps taken.
    pub steps: usize,
    pub early_stopped: bool,
    pub initial_objective: f64,
    pub objective: f64,
    /// `||grad(x', y') - grad(x, y)||`.
    pub grad_distance: f64,
    /// `||x' - x||`.
    pub input_distance: f64,
}

struct Eval {
    objective: f64,
    grad_distance: f64,
    gradient: Vec<Tensor>,
    /// d objective / d (x', y').
    dx: Tensor,
    dy: Tensor,
}

/// Square root that treats an exact zero as a kink with zero slope.
fn safe_sqrt(g: &mut Graph, s: NodeId) -> Result<NodeId> {
    if g.value(s).item() == 0.0 {
        g.scale(s, 0.0)
    } else {
        g.sqrt(s)
    }
}

/// `sqrt(sum_i ||a_i - b_i||^2)` over paired tensors.
pub(crate) fn gradient_gap(g: &mut Graph, grads: &[NodeId], target: &[NodeId]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (&a, &b) in grads.iter().zip(target) {
        let d = g.sub(a, b)?;
        let s = g.sq_norm(d)?;
        acc = Some(match acc {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let s = acc.ok_or_else(|| Error::Empty("no gradient tensors".into()))?;
    safe_sqrt(g, s)
}

fn evaluate(
    model: &MlpClassifier,
    x: &Tensor,
    gt: &[usize],
    target: &[Tensor],
    xp: &Tensor,
    yp: &Tensor,
    cfg: &FedDefConfig,
    want_grad: bool,
) -> Result<Eval> {
    let mut g = Graph::new();
    let xn = g.leaf(xp.clone());
    let yn = g.leaf(yp.clone());
    let params = model.net.bind(&mut g);
    let grads = model.gradient_nodes(&mut g, &params, xn, yn)?;
    let gradient: Vec<Tensor> = grads.iter().map(|&n| g.value(n).clone()).collect();
    let tnodes: Vec<NodeId> = target.iter().map(|t| g.constant(t.clone())).collect();

    let dist = gradient_gap(&mut g, &grads, &tnodes)?;
    let over = g.add_scalar(dist, -cfg.epsilon)?;
    let hinge_g = g.relu(over)?;
    let term_g = g.scale(hinge_g, cfg.alpha)?;

    let x0 = g.constant(x.clone());
    let dx = g.sub(xn, x0)?;
    let s = g.sq_norm(dx)?;
    let xdist = safe_sqrt(&mut g, s)?;
    let short = g.neg(xdist)?;
    let short = g.add_scalar(short, cfg.delta)?;
    let term_x = g.relu(short)?;

    // sum over rows of |min(y'_row) - y'_row[gt]|
    let mins = g.min_rows(yn)?;
    let mut sel = Tensor::zeros(yp.shape());
    for (i, &c) in gt.iter().enumerate() {
        sel.row_mut(i)[c] = 1.0;
    }
    let sel = g.constant(sel);
    let picked = g.mul(yn, sel)?;
    let picked = g.sum_cols(picked)?;
    let gap = g.sub(mins, picked)?;
    let gap = g.abs(gap)?;
    let term_y = g.sum(gap)?;

    let t = g.add(term_g, term_x)?;
    let obj = g.add(t, term_y)?;
    let objective = g.value(obj).item();
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            context: "pseudo-data objective".into(),
            index: 0,
        });
    }
    let grad_distance = g.value(dist).item();
    let (dx, dy) = if want_grad {
        let mut d = g.gradients(obj, &[xn, yn])?;
        let dy = d.pop().expect("two");
        (d.pop().expect("two"), dy)
    } else {
        (Tensor::zeros(xp.shape()), Tensor::zeros(yp.shape()))
    };
    Ok(Eval {
        objective,
        grad_distance,
        gradient,
        dx,
        dy,
    })
}

pub(crate) fn uniform_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(rng, 0.0, 1.0)).collect()).expect("sized")
}

/// Objective value at a given pseudo batch.
pub fn feddef_objective_value(
    model: &MlpClassifier,
    x: &Tensor,
    y: &Tensor,
    xp: &Tensor,
    yp: &Tensor,
    cfg: &FedDefConfig,
) -> Result<f64> {
    let target = model.gradient(x, y)?.to_tensors();
    Ok(evaluate(model, x, &y.argmax_rows(), &target, xp, yp, cfg, false)?.objective)
}

/// Runs the transformation for one batch. Returns the lowest-objective
/// iterate, or the current one when the pseudo gradient vanishes.
pub fn feddef_transform(
    model: &MlpClassifier,
    x: &Tensor,
    y: &Tensor,
    cfg: &FedDefConfig,
    rng: &mut impl Rng,
) -> Result<FedDefOutput> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::Empty("feddef batch".into()));
    }
    let target = model.gradient(x, y)?.to_tensors();
    let gt = y.argmax_rows();
    let mut xp = uniform_tensor(x.shape(), rng);
    let mut yp = uniform_tensor(y.shape(), rng);
    let mut adam = AdamState::new(&[x.shape(), y.shape()]);

    let mut initial_objective = f64::NAN;
    let mut best: Option<(f64, Tensor, Tensor, Eval)> = None;
    let mut steps = 0;
    let mut early = false;
    for step in 0..=cfg.steps {
        let last = step == cfg.steps;
        let ev = evaluate(model, x, &gt, &target, &xp, &yp, cfg, !last).map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, index: step },
            other => other,
        })?;
        if step == 0 {
            initial_objective = ev.objective;
        }
        let vanished = ev.gradient.iter().all(|t| t.max_abs() <= cfg.g_value);
        if vanished {
            early = true;
            best = Some((ev.objective, xp.clone(), yp.clone(), ev));
            break;
        }
        let improves = best.as_ref().is_none_or(|b| ev.objective < b.0);
        let (dx, dy) = (ev.dx.clone(), ev.dy.clone());
        if improves {
            best = Some((ev.objective, xp.clone(), yp.clone(), ev));
        }
        if last {
            break;
        }
        let mut p = [xp, yp];
        adam.step(&mut p, &[dx, dy], cfg.lr)?;
        let [a, b] = p;
        xp = a;
        yp = b;
        steps += 1;
    }
    let (objective, bx, by, ev) = best.expect("at least one evaluation");
    let input_distance = bx.sub(x)?.l2_norm();
    Ok(FedDefOutput {
        gradient: GradientVector::from_tensors(ev.gradient)?,
        x: bx,
        y: by,
        steps,
        early_stopped: early,
        initial_objective,
        objective,
        grad_distance: ev.grad_distance,
        input_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn setup(seed: u64) -> (MlpClassifier, Tensor, Tensor) {
        let mut rng = stream(seed, &[]);
        let m = MlpClassifier::new(4, 3, &mut rng).unwrap();
        let x = Tensor::matrix(1, 4, (0..4).map(|_| uniform(&mut rng, 0.0, 1.0)).collect()).unwrap();
        let y = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        (m, x, y)
    }

    #[test]
    fn descends_from_initialization() {
        for seed in 0..5 {
            let (m, x, y) = setup(seed);
            let out = feddef_transform(&m, &x, &y, &FedDefConfig::default(), &mut stream(seed, &[1])).unwrap();
            assert!(out.objective <= out.initial_objective);
            let re = feddef_objective_value(&m, &x, &y, &out.x, &out.y, &FedDefConfig::default()).unwrap();
            assert!((re - out.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_gradient_is_pseudo_gradient() {
        let (m, x, y) = setup(3);
        let out = feddef_transform(&m, &x, &y, &FedDefConfig::default(), &mut stream(3, &[1])).unwrap();
        let direct = m.gradient(&out.x, &out.y).unwrap();
        assert!(direct.distance(&out.gradient).unwrap() < 1e-12);
    }

    #[test]
    fn vanishing_gradient_stops_at_once() {
        // Zero model: the pseudo gradient is zero for every input only if
        // y' is proportional to the uniform softmax, so use a huge g_value.
        let (m, x, y) = setup(4);
        let cfg = FedDefConfig {
            g_value: 1e9,
            ..Default::default()
        };
        let out = feddef_transform(&m, &x, &y, &cfg, &mut stream(4, &[1])).unwrap();
        assert!(out.early_stopped);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn invalid_config() {
        let (m, x, y) = setup(1);
        let cfg = FedDefConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(feddef_transform(&m, &x, &y, &cfg, &mut stream(1, &[])).is_err());
    }
}
