//! Gradient-matching inversion: optimize dummy inputs and labels until
//! their gradient matches the leaked one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extract::LeakedUpdate;
use crate::autodiff::{AdamState, Graph, NodeId};
use crate::data::{canonicalize, FeatureSchema};
use crate::defense::feddef::{gradient_gap, uniform_tensor};
use crate::error::{Error, Result};
use crate::nn::MlpClassifier;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L2,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub metric: Metric,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    /// An attempt stops once its objective is at or below this value.
    pub tolerance: f64,
    /// Optimizer steps spent on one row before moving to the next, in
    /// batched inversion.
    pub row_steps: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            metric: Metric::L2,
            steps: 300,
            lr: 0.1,
            restarts: 3,
            tolerance: 1e-10,
            row_steps: 25,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 || self.row_steps == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(vec![format!(
                "inversion needs steps, restarts, row_steps >= 1 and lr > 0 (got {}, {}, {}, {})",
                self.steps, self.restarts, self.row_steps, self.lr
            )]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    /// Canonicalized rows.
    pub x: Tensor,
    /// Raw optimized label rows.
    pub y: Tensor,
    pub labels: Vec<usize>,
    pub objective: f64,
}

/// Distance between the gradient at `(x, y)` and the leaked one, as a
/// graph node.
fn matching_objective(
    g: &mut Graph,
    model: &MlpClassifier,
    x: NodeId,
    y: NodeId,
    target: &[Tensor],
    metric: Metric,
) -> Result<NodeId> {
    let params = model.net.bind(g);
    let grads = model.gradient_nodes(g, &params, x, y)?;
    let tn: Vec<NodeId> = target.iter().map(|t| g.constant(t.clone())).collect();
    match metric {
        Metric::L2 => gradient_gap(g, &grads, &tn),
        Metric::Cosine => {
            let mut dot: Option<NodeId> = None;
            let mut sq: Option<NodeId> = None;
            for (&a, &b) in grads.iter().zip(&tn) {
                let d = g.dot(a, b)?;
                let s = g.sq_norm(a)?;
                dot = Some(match dot {
                    Some(t) => g.add(t, d)?,
                    None => d,
                });
                sq = Some(match sq {
                    Some(t) => g.add(t, s)?,
                    None => s,
                });
            }
            let (dot, sq) = (dot.expect("layers"), sq.expect("layers"));
            let tnorm: f64 = target
                .iter()
                .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            // 1 - <a, b> / (|a| |b|); a tiny floor keeps a zero gradient finite.
            let sq = g.add_scalar(sq, 1e-300)?;
            let an = g.sqrt(sq)?;
            let denom = g.scale(an, tnorm.max(1e-300))?;
            let ratio = g.div(dot, denom)?;
            let neg = g.neg(ratio)?;
            g.add_scalar(neg, 1.0)
        }
    }
}

struct Attempt {
    x: Tensor,
    y: Tensor,
    objective: f64,
}

/// Adam on the rows selected by `active` (all rows when `None`), with `x`
/// held fixed when `freeze_x`. Returns the best iterate seen.
#[allow(clippy::too_many_arguments)]
fn optimize(
    model: &MlpClassifier,
    target: &[Tensor],
    cfg: &InversionConfig,
    mut x: Tensor,
    mut y: Tensor,
    freeze_x: bool,
    schedule: &dyn Fn(usize) -> Option<usize>,
) -> Result<Attempt> {
    let mut adam = AdamState::new(&[x.shape(), y.shape()]);
    let mut best: Option<Attempt> = None;
    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let yn = g.leaf(y.clone());
        let obj = matching_objective(&mut g, model, xn, yn, target, cfg.metric)?;
        let v = g.value(obj).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "inversion objective".into(),
                index: step,
            });
        }
        if best.as_ref().is_none_or(|b| v < b.objective) {
            best = Some(Attempt {
                x: x.clone(),
                y: y.clone(),
                objective: v,
            });
        }
        if step == cfg.steps || v <= cfg.tolerance {
            break;
        }
        let mut d = g.gradients(obj, &[xn, yn])?;
        let mut dy = d.pop().expect("two");
        let mut dx = d.pop().expect("two");
        if freeze_x {
            dx = Tensor::zeros(x.shape());
        }
        let active = schedule(step);
        if let Some(row) = active {
            for t in [&mut dx, &mut dy] {
                let cols = t.cols();
                for (i, chunk) in t.data_mut().chunks_mut(cols).enumerate() {
                    if i != row {
                        chunk.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
        let before = [x.clone(), y.clone()];
        let mut p = [x, y];
        adam.step(&mut p, &[dx, dy], cfg.lr)?;
        // Adam momentum would keep moving rows whose gradient was masked;
        // put them back so only the active row changes.
        if let Some(row) = active {
            for (t, old) in p.iter_mut().zip(&before) {
                for i in (0..t.rows()).filter(|&i| i != row) {
                    t.row_mut(i).copy_from_slice(old.row(i));
                }
            }
        }
        let [a, b] = p;
        x = a;
        y = b;
    }
    Ok(best.expect("evaluated at least once"))
}

fn finish(a: Attempt, schema: &FeatureSchema) -> Result<Inversion> {
    let d = a.x.cols();
    let mut rows = Vec::with_capacity(a.x.len());
    for row in a.x.data().chunks(d) {
        rows.extend(canonicalize(row, schema));
    }
    Ok(Inversion {
        x: Tensor::new(a.x.shape().to_vec(), rows)?,
        labels: a.y.argmax_rows(),
        y: a.y,
        objective: a.objective,
    })
}

#[allow(clippy::too_many_arguments)]
fn run(
    update: &LeakedUpdate,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    rows: usize,
    fixed_x: Option<&Tensor>,
    start: Option<(&Tensor, &Tensor)>,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    cfg.validate()?;
    let target = update.gradient.to_tensors();
    let (dim, n) = (model.dim(), model.n_classes());
    if schema.dim() != dim {
        return Err(Error::Shape {
            op: "invert",
            lhs: vec![schema.dim()],
            rhs: vec![dim],
        });
    }
    let schedule = move |step: usize| {
        if rows > 1 {
            Some((step / cfg.row_steps) % rows)
        } else {
            None
        }
    };
    let mut best: Option<Attempt> = None;
    let mut last_err = None;
    for attempt in 0..cfg.restarts {
        let (x0, y0) = match (start, attempt) {
            (Some((x, y)), 0) => (x.clone(), y.clone()),
            _ => (uniform_tensor(&[rows, dim], rng), uniform_tensor(&[rows, n], rng)),
        };
        let x0 = fixed_x.cloned().unwrap_or(x0);
        match optimize(model, &target, cfg, x0, y0, fixed_x.is_some(), &schedule) {
            Ok(a) => {
                if best.as_ref().is_none_or(|b| a.objective < b.objective) {
                    best = Some(a);
                }
            }
            Err(e @ Error::NonFinite { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        if best.as_ref().is_some_and(|b| b.objective <= cfg.tolerance) {
            break;
        }
    }
    match best {
        Some(a) => finish(a, schema),
        None => Err(last_err.unwrap_or_else(|| Error::Invalid("no inversion attempt ran".into()))),
    }
}

/// Single-row inversion from uniform dummy data.
pub fn invert(
    update: &LeakedUpdate,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    run(update, model, cfg, schema, 1, None, None, rng)
}

/// Like [`invert`] but the first attempt starts at the given point.
pub fn invert_from(
    update: &LeakedUpdate,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    x0: &Tensor,
    y0: &Tensor,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    run(update, model, cfg, schema, x0.rows(), None, Some((x0, y0)), rng)
}

/// Recovers labels only, with the input held at `x`. The gradient is linear
/// in the labels, so the problem is convex and one attempt suffices.
pub fn invert_labels(
    update: &LeakedUpdate,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    x: &Tensor,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    let cfg = InversionConfig { restarts: 1, ..*cfg };
    run(update, model, &cfg, schema, x.rows(), Some(x), None, rng)
}

/// Reconstructs `batch` rows, cycling through them and optimizing one row
/// at a time while the others stay fixed. Row order is arbitrary.
pub fn invert_batch(
    update: &LeakedUpdate,
    batch: usize,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    rng: &mut impl Rng,
) -> Result<Inversion> {
    if batch == 0 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    run(update, model, cfg, schema, batch, None, None, rng)
}
