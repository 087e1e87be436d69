use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::data::Dataset;
use crate::defense::{dp_perturb, feddef_transform, gp_prune, mix_transform, DefenseKind};
use crate::error::{Error, Result};
use crate::nn::{GradientVector, MlpClassifier};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocalOptimizer {
    /// Fresh Adam state for every local update.
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub model: MlpClassifier,
    /// Mean cross entropy of the real batches before each step.
    pub mean_loss: f64,
    /// The gradient shared at the last step, after the defense.
    pub last_gradient: GradientVector,
}

/// Row indices of one minibatch: `bs` distinct rows, or all rows in
/// order when the shard is not larger than `bs`.
pub fn sample_batch(rows: usize, bs: usize, rng: &mut impl Rng) -> Vec<usize> {
    if rows <= bs {
        (0..rows).collect()
    } else {
        sample(rng, rows, bs).into_vec()
    }
}

/// Defended gradient for one real batch.
pub(crate) fn defended_gradient(
    model: &MlpClassifier,
    x: &Tensor,
    y: &Tensor,
    defense: &DefenseKind,
    rng: &mut impl Rng,
) -> Result<GradientVector> {
    Ok(match defense {
        DefenseKind::None => model.gradient(x, y)?,
        DefenseKind::Feddef(cfg) => feddef_transform(model, x, y, cfg, rng)?.gradient,
        DefenseKind::Dp(cfg) => dp_perturb(&model.gradient(x, y)?, cfg, rng),
        DefenseKind::Gp { rate } => gp_prune(&model.gradient(x, y)?, *rate),
        DefenseKind::Mix(cfg) => {
            let (xm, ym) = mix_transform(x, y, cfg, rng)?;
            model.gradient(&xm, &ym)?
        }
    })
}

/// `steps` local steps from `global` on `shard`.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    global: &MlpClassifier,
    shard: &Dataset,
    defense: &DefenseKind,
    steps: usize,
    batch: usize,
    lr: f64,
    optimizer: LocalOptimizer,
    rng: &mut impl Rng,
) -> Result<LocalUpdate> {
    if shard.rows() == 0 {
        return Err(Error::Empty("client shard".into()));
    }
    let mut model = global.clone();
    let mut params = model.net.params.to_tensors();
    let mut adam = AdamState::for_tensors(&params);
    let mut loss_sum = 0.0;
    let mut last = None;
    for step in 0..steps {
        let idx = sample_batch(shard.rows(), batch, rng);
        let x = shard.x.select_rows(&idx);
        let y = shard.y.select_rows(&idx);
        let loss = model.ce_loss(&x, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "local training loss".into(),
                index: step,
            });
        }
        loss_sum += loss;
        let g = defended_gradient(&model, &x, &y, defense, rng)?;
        match optimizer {
            LocalOptimizer::Adam => adam.step(&mut params, &g.to_tensors(), lr)?,
            LocalOptimizer::Sgd => {
                model.net.params.sgd_step(&g, lr)?;
                params = model.net.params.to_tensors();
            }
        }
        model.net.set_from_tensors(params.clone())?;
        last = Some(g);
    }
    Ok(LocalUpdate {
        model,
        mean_loss: loss_sum / steps.max(1) as f64,
        last_gradient: last.ok_or_else(|| Error::Invalid("local steps must be >= 1".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};
    use crate::nn::{Activation, LayerParams, Mlp, ModelParams};
    use crate::rng::stream;

    #[test]
    fn zero_lr_leaves_model() {
        let d = synth_dataset(&SynthConfig {
            rows: 20,
            dim: 4,
            ..Default::default()
        })
        .unwrap();
        let m = MlpClassifier::new(4, 2, &mut stream(1, &[])).unwrap();
        for def in [DefenseKind::None, DefenseKind::Gp { rate: 0.5 }] {
            for opt in [LocalOptimizer::Adam, LocalOptimizer::Sgd] {
                let u = local_update(&m, &d, &def, 1, 8, 0.0, opt, &mut stream(2, &[])).unwrap();
                assert_eq!(u.model, m);
            }
        }
    }

    #[test]
    fn full_batch_step_matches_closed_form() {
        // One linear layer, two inputs, two logits; CE gradient is
        // (softmax(z) - y) x^T averaged over rows.
        let w = Tensor::matrix(2, 1, vec![0.5, -0.5]).unwrap();
        let b = Tensor::vector(vec![0.1, -0.1]);
        let net = Mlp {
            dims: vec![1, 2],
            hidden: Activation::Relu,
            output: Activation::Identity,
            params: ModelParams::new(vec![LayerParams { weight: w, bias: b }]),
        };
        let m = MlpClassifier::from_mlp(net);
        let schema = crate::data::synth::synth_schema(1, 0, 2);
        let x = Tensor::matrix(2, 1, vec![0.2, 0.8]).unwrap();
        let d = Dataset::new(x, &[0, 1], schema, vec!["b".into(), "a".into()], 0).unwrap();
        let lr = 0.3;
        let u = local_update(
            &m,
            &d,
            &DefenseKind::None,
            1,
            2,
            lr,
            LocalOptimizer::Sgd,
            &mut stream(0, &[]),
        )
        .unwrap();

        let sm = |z0: f64, z1: f64| {
            let (a, c) = (z0.exp(), z1.exp());
            (a / (a + c), c / (a + c))
        };
        let mut gw = [0.0; 2];
        let mut gb = [0.0; 2];
        for (xv, lab) in [(0.2, 0usize), (0.8, 1)] {
            let (p0, p1) = sm(0.5 * xv + 0.1, -0.5 * xv - 0.1);
            let r = [p0 - (lab == 0) as u8 as f64, p1 - (lab == 1) as u8 as f64];
            for k in 0..2 {
                gw[k] += r[k] * xv / 2.0;
                gb[k] += r[k] / 2.0;
            }
        }
        let p = &u.model.net.params.layers[0];
        let expect_w = [0.5 - lr * gw[0], -0.5 - lr * gw[1]];
        let expect_b = [0.1 - lr * gb[0], -0.1 - lr * gb[1]];
        for k in 0..2 {
            assert!((p.weight.data()[k] - expect_w[k]).abs() < 1e-12);
            assert!((p.bias.data()[k] - expect_b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let d = synth_dataset(&SynthConfig {
            rows: 4,
            dim: 2,
            ..Default::default()
        })
        .unwrap()
        .subset(&[]);
        let m = MlpClassifier::new(2, 2, &mut stream(1, &[])).unwrap();
        assert!(local_update(
            &m,
            &d,
            &DefenseKind::None,
            1,
            2,
            0.1,
            LocalOptimizer::Sgd,
            &mut stream(0, &[])
        )
        .is_err());
    }
}
