//! Gradient-based white-box evasion on single feature rows.
//!
//! Every attack takes a row in `[0,1]^dim` and returns a new row in the same
//! box; inputs are never modified. Classifier attacks are targeted toward
//! `cfg.target` except DeepFool, which is untargeted. Against the anomaly
//! detector the reconstruction score takes the place of cross entropy.

use rand::Rng;

use super::{AttackConfig, AttackKind, Victim};
use crate::autodiff::{AdamState, Graph, NodeId};
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::nn::{ce_loss_graph, MlpClassifier};
use crate::rng::uniform;
use crate::tensor::Tensor;

pub const DEEPFOOL_OVERSHOOT: f64 = 0.02;

/// Fractions of the step budget at which AutoPGD reviews its step size.
pub const APGD_CHECKPOINTS: [f64; 8] = [0.0, 0.22, 0.41, 0.57, 0.70, 0.79, 0.86, 0.93];
const APGD_MOMENTUM: f64 = 0.75;
const APGD_RHO: f64 = 0.75;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn row_tensor(x: &[f64]) -> Tensor {
    Tensor::matrix(1, x.len(), x.to_vec()).expect("row")
}

fn check_row(victim: &Victim<'_>, x: &[f64]) -> Result<()> {
    if x.len() != victim.dim() {
        return Err(Error::Shape {
            op: "attack_input",
            lhs: vec![x.len()],
            rhs: vec![victim.dim()],
        });
    }
    Ok(())
}

fn check_target(model: &MlpClassifier, target: usize) -> Result<()> {
    if target >= model.n_classes() {
        return Err(Error::Invalid(format!(
            "target class {target} out of range for {} classes",
            model.n_classes()
        )));
    }
    Ok(())
}

/// Keeps `v` inside the L-infinity ball of radius `eps` around `x` and the
/// unit box.
fn project(v: &mut [f64], x: &[f64], eps: f64) {
    for (a, &o) in v.iter_mut().zip(x) {
        *a = a.clamp(o - eps, o + eps).clamp(0.0, 1.0);
    }
}

/// Objective node for the sign-gradient attacks: cross entropy toward the
/// target class, or the anomaly score.
fn objective_node(g: &mut Graph, victim: &Victim<'_>, xn: NodeId, target: usize) -> Result<NodeId> {
    match victim {
        Victim::Classifier(m) => {
            check_target(m, target)?;
            let p = m.net.bind(g);
            let z = m.net.forward_graph(g, &p, xn)?;
            let y = g.constant(one_hot(&[target], m.n_classes()));
            ce_loss_graph(g, z, y)
        }
        Victim::Anomaly(a) => {
            let p = a.net.bind(g);
            a.score_graph(g, &p, xn)
        }
    }
}

/// The value FGSM and PGD descend: cross entropy toward `target` for a
/// classifier, the RMSE score for the anomaly detector.
pub fn objective(victim: &Victim<'_>, x: &[f64], target: usize) -> Result<f64> {
    check_row(victim, x)?;
    let mut g = Graph::new();
    let xn = g.constant(row_tensor(x));
    let l = objective_node(&mut g, victim, xn, target)?;
    Ok(g.value(l).item())
}

fn objective_grad(victim: &Victim<'_>, x: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let xn = g.leaf(row_tensor(x));
    let l = objective_node(&mut g, victim, xn, target)?;
    let v = g.value(l).item();
    let gx = g.gradients(l, &[xn])?.remove(0);
    Ok((v, gx.into_data()))
}

/// True when the row evades: classified as `target`, or scored under the
/// detector's threshold.
pub fn evades(victim: &Victim<'_>, x: &[f64], target: usize) -> Result<bool> {
    let t = row_tensor(x);
    Ok(match victim {
        Victim::Classifier(m) => m.predict(&t)?[0] == target,
        Victim::Anomaly(a) => a.anomaly_score(&t)?[0] < a.threshold,
    })
}

pub fn fgsm(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<Vec<f64>> {
    check_row(victim, x)?;
    let eps = cfg.epsilon();
    let (_, gx) = objective_grad(victim, x, cfg.target)?;
    Ok(x.iter()
        .zip(&gx)
        .map(|(&v, &d)| (v - eps * sign(d)).clamp(0.0, 1.0))
        .collect())
}

pub fn pgd(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_row(victim, x)?;
    let (eps, alpha) = (cfg.epsilon(), cfg.alpha());
    let mut cur: Vec<f64> = if cfg.random_start {
        x.iter().map(|&v| v + uniform(rng, -eps, eps)).collect()
    } else {
        x.to_vec()
    };
    project(&mut cur, x, eps);
    for _ in 0..cfg.steps {
        let (_, gx) = objective_grad(victim, &cur, cfg.target)?;
        for (c, d) in cur.iter_mut().zip(&gx) {
            *c -= alpha * sign(*d);
        }
        project(&mut cur, x, eps);
    }
    Ok(cur)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Carlini-Wagner style L2 attack over `x' = sigmoid(w)`.
///
/// Minimizes `c * |x' - x|^2` plus a hinge that vanishes once the row
/// evades. An iterate replaces the incumbent only if it evades and is
/// closer to `x`; with no successful iterate the input comes back unchanged.
pub fn cw(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<Vec<f64>> {
    check_row(victim, x)?;
    if let Victim::Classifier(m) = victim {
        check_target(m, cfg.target)?;
    }
    if evades(victim, x, cfg.target)? {
        return Ok(x.to_vec());
    }
    let dim = x.len();
    let mut w = vec![Tensor::matrix(1, dim, x.iter().map(|&v| logit(v)).collect())?];
    let mut adam = AdamState::for_tensors(&w);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let wn = g.leaf(w[0].clone());
        let xa = g.sigmoid(wn)?;
        let x0 = g.constant(row_tensor(x));
        let d = g.sub(xa, x0)?;
        let dist = g.sq_norm(d)?;
        let (hinge, success) = match victim {
            Victim::Classifier(m) => {
                let p = m.net.bind(&mut g);
                let z = m.net.forward_graph(&mut g, &p, xa)?;
                let zv = g.value(z).clone();
                let other = (0..m.n_classes())
                    .filter(|&j| j != cfg.target)
                    .max_by(|&a, &b| zv.data()[a].total_cmp(&zv.data()[b]).then(b.cmp(&a)))
                    .ok_or_else(|| Error::Invalid("classifier needs at least 2 classes".into()))?;
                let zo = g.select(z, other)?;
                let zt = g.select(z, cfg.target)?;
                let gap = g.sub(zo, zt)?;
                (g.relu(gap)?, zv.argmax_rows()[0] == cfg.target)
            }
            Victim::Anomaly(a) => {
                let p = a.net.bind(&mut g);
                let s = a.score_graph(&mut g, &p, xa)?;
                let sv = g.value(s).item();
                let over = g.add_scalar(s, -a.threshold)?;
                (g.relu(over)?, sv < a.threshold)
            }
        };
        if success {
            let dv = g.value(dist).item();
            if best.as_ref().is_none_or(|(bd, _)| dv < *bd) {
                best = Some((dv, g.value(xa).data().to_vec()));
            }
        }
        if step == cfg.steps {
            break;
        }
        let wd = g.scale(dist, cfg.c)?;
        let loss = g.add(wd, hinge)?;
        let grads = g.gradients(loss, &[wn])?;
        adam.step(&mut w, &grads, cfg.cw_lr)?;
    }
    Ok(best.map(|(_, v)| v).unwrap_or_else(|| x.to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFoolTrace {
    /// Accumulated hyperplane steps before overshoot and clipping.
    pub raw_perturbation: Vec<f64>,
    pub iterations: usize,
    pub adversarial: Vec<f64>,
}

/// Untargeted DeepFool with overshoot, clipped to the budget at the end.
pub fn deepfool(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<Vec<f64>> {
    Ok(deepfool_traced(victim, x, cfg)?.adversarial)
}

pub fn deepfool_traced(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<DeepFoolTrace> {
    let model = match victim {
        Victim::Classifier(m) => *m,
        Victim::Anomaly(_) => {
            return Err(Error::Unsupported(
                "DeepFool needs class logits; the anomaly detector only exposes a score".into(),
            ))
        }
    };
    check_row(victim, x)?;
    check_target(model, cfg.target)?;
    let dim = x.len();
    let mut r_total = vec![0.0; dim];
    let origin = model.predict(&row_tensor(x))?[0];
    // A row the classifier already calls benign has nothing to gain.
    if origin == cfg.target {
        return Ok(DeepFoolTrace {
            raw_perturbation: r_total,
            iterations: 0,
            adversarial: x.to_vec(),
        });
    }
    let n = model.n_classes();
    let mut iterations = 0;
    let overshot = |r: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(r)
            .map(|(&v, &d)| v + (1.0 + DEEPFOOL_OVERSHOOT) * d)
            .collect()
    };
    while iterations < cfg.steps {
        let cur = overshot(&r_total);
        let mut g = Graph::new();
        let xn = g.leaf(row_tensor(&cur));
        let p = model.net.bind(&mut g);
        let z = model.net.forward_graph(&mut g, &p, xn)?;
        let zv = g.value(z).data().to_vec();
        let top = g.value(z).argmax_rows()[0];
        if top != origin {
            break;
        }
        let z0 = g.select(z, origin)?;
        let g0 = g.gradients(z0, &[xn])?.remove(0).into_data();
        let mut step: Option<(f64, f64, Vec<f64>)> = None;
        for k in (0..n).filter(|&k| k != origin) {
            let zk = g.select(z, k)?;
            let gk = g.gradients(zk, &[xn])?.remove(0).into_data();
            let w: Vec<f64> = gk.iter().zip(&g0).map(|(a, b)| a - b).collect();
            let wn: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if wn == 0.0 {
                continue;
            }
            let f = zv[k] - zv[origin];
            let d = f.abs() / wn;
            if step.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                step = Some((d, f.abs() / (wn * wn), w));
            }
        }
        let Some((_, coef, w)) = step else { break };
        for (r, wi) in r_total.iter_mut().zip(&w) {
            *r += coef * wi;
        }
        iterations += 1;
    }
    let mut adversarial = overshot(&r_total);
    project(&mut adversarial, x, cfg.epsilon());
    Ok(DeepFoolTrace {
        raw_perturbation: r_total,
        iterations,
        adversarial,
    })
}

/// AutoPGD's objective: targeted difference-of-logits ratio toward
/// `target`, or cross entropy for two-class models whose logit ranking is
/// too short for the ratio's denominator.
pub fn autopgd_objective(model: &MlpClassifier, x: &[f64], target: usize) -> Result<f64> {
    let mut g = Graph::new();
    let xn = g.constant(row_tensor(x));
    let (l, _) = autopgd_node(&mut g, model, xn, target)?;
    Ok(g.value(l).item())
}

fn autopgd_node(g: &mut Graph, model: &MlpClassifier, xn: NodeId, target: usize) -> Result<(NodeId, bool)> {
    check_target(model, target)?;
    let n = model.n_classes();
    let p = model.net.bind(g);
    let z = model.net.forward_graph(g, &p, xn)?;
    if n < 3 {
        let y = g.constant(one_hot(&[target], n));
        return Ok((ce_loss_graph(g, z, y)?, true));
    }
    let zv = g.value(z).data().to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| zv[b].total_cmp(&zv[a]).then(a.cmp(&b)));
    let other = order.iter().copied().find(|&j| j != target).expect("n >= 3");
    let zo = g.select(z, other)?;
    let zt = g.select(z, target)?;
    let num = g.sub(zo, zt)?;
    let z1 = g.select(z, order[0])?;
    let tail = if n >= 4 {
        let a = g.select(z, order[2])?;
        let b = g.select(z, order[3])?;
        let s = g.add(a, b)?;
        g.scale(s, 0.5)?
    } else {
        g.select(z, order[2])?
    };
    let den = g.sub(z1, tail)?;
    let den = g.add_scalar(den, 1e-12)?;
    Ok((g.div(num, den)?, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoPgdTrace {
    pub adversarial: Vec<f64>,
    pub best_objective: f64,
    /// Step size in force at every iteration.
    pub step_sizes: Vec<f64>,
    /// Set when the model has two classes and cross entropy replaced the
    /// logit ratio.
    pub ce_fallback: bool,
}

pub fn autopgd(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<Vec<f64>> {
    Ok(autopgd_traced(victim, x, cfg)?.adversarial)
}

/// Momentum sign-gradient descent whose step size starts at twice the
/// budget and halves at a checkpoint when progress since the previous one
/// was poor, restarting from the best point found.
pub fn autopgd_traced(victim: &Victim<'_>, x: &[f64], cfg: &AttackConfig) -> Result<AutoPgdTrace> {
    let model = match victim {
        Victim::Classifier(m) => *m,
        Victim::Anomaly(_) => {
            return Err(Error::Unsupported(
                "AutoPGD needs class logits; the anomaly detector only exposes a score".into(),
            ))
        }
    };
    check_row(victim, x)?;
    let eps = cfg.epsilon();
    let budget = cfg.steps;
    let eval = |v: &[f64]| -> Result<(f64, Vec<f64>, bool)> {
        let mut g = Graph::new();
        let xn = g.leaf(row_tensor(v));
        let (l, fb) = autopgd_node(&mut g, model, xn, cfg.target)?;
        let val = g.value(l).item();
        let gx = g.gradients(l, &[xn])?.remove(0).into_data();
        Ok((val, gx, fb))
    };
    let checkpoints: Vec<usize> = APGD_CHECKPOINTS
        .iter()
        .map(|p| (p * budget as f64).ceil() as usize)
        .collect();

    let mut eta = 2.0 * eps;
    let (f0, g0, ce_fallback) = eval(x)?;
    let mut prev = x.to_vec();
    let mut cur: Vec<f64> = x.iter().zip(&g0).map(|(&v, &d)| v - eta * sign(d)).collect();
    project(&mut cur, x, eps);
    let mut step_sizes = vec![eta];
    let (mut f_cur, mut g_cur, _) = eval(&cur)?;
    let (mut best, mut f_best) = if f_cur < f0 {
        (cur.clone(), f_cur)
    } else {
        (x.to_vec(), f0)
    };
    let mut successes = usize::from(f_cur < f0);
    let mut last_check = 0usize;
    let mut eta_at_check = eta;
    let mut best_at_check = f0;
    let mut next_cp = 1;

    for k in 1..budget {
        step_sizes.push(eta);
        let mut z: Vec<f64> = cur.iter().zip(&g_cur).map(|(&v, &d)| v - eta * sign(d)).collect();
        project(&mut z, x, eps);
        let mut next: Vec<f64> = (0..cur.len())
            .map(|i| cur[i] + APGD_MOMENTUM * (z[i] - cur[i]) + (1.0 - APGD_MOMENTUM) * (cur[i] - prev[i]))
            .collect();
        project(&mut next, x, eps);
        let (f_next, g_next, _) = eval(&next)?;
        if f_next < f_cur {
            successes += 1;
        }
        if f_next < f_best {
            f_best = f_next;
            best = next.clone();
        }
        prev = std::mem::replace(&mut cur, next);
        f_cur = f_next;
        g_cur = g_next;

        if next_cp < checkpoints.len() && k == checkpoints[next_cp] {
            let span = (k - last_check) as f64;
            let stalled = (successes as f64) < APGD_RHO * span;
            let flat = eta_at_check == eta && best_at_check == f_best;
            eta_at_check = eta;
            if stalled || flat {
                eta /= 2.0;
                cur = best.clone();
                prev = best.clone();
                let (fb, gb, _) = eval(&cur)?;
                f_cur = fb;
                g_cur = gb;
            }
            best_at_check = f_best;
            successes = 0;
            last_check = k;
            next_cp += 1;
        }
    }
    Ok(AutoPgdTrace {
        adversarial: best,
        best_objective: f_best,
        step_sizes,
        ce_fallback,
    })
}

/// Runs the configured attack on every row of `x`.
pub fn attack_rows(victim: &Victim<'_>, x: &Tensor, cfg: &AttackConfig, rng: &mut impl Rng) -> Result<Tensor> {
    cfg.validate()?;
    if matches!(victim, Victim::Anomaly(_)) && !cfg.kind.supports_anomaly() {
        return Err(Error::Unsupported(format!(
            "{} cannot target the anomaly detector",
            cfg.kind.label()
        )));
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let row = x.row(i);
        let adv = match cfg.kind {
            AttackKind::Fgsm => fgsm(victim, row, cfg)?,
            AttackKind::Pgd => pgd(victim, row, cfg, rng)?,
            AttackKind::Cw => cw(victim, row, cfg)?,
            AttackKind::Deepfool => deepfool(victim, row, cfg)?,
            AttackKind::Autopgd => autopgd(victim, row, cfg)?,
        };
        out.extend(adv);
    }
    Tensor::new(vec![x.rows(), victim.dim()], out)
}
