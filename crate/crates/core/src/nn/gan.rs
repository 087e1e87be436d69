//! Generator/discriminator pair for the black-box evasion pipeline.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::AnomalyAutoencoder;
use super::classifier::MlpClassifier;
use super::mlp::{flat_handles, softplus_graph, Activation, Mlp};
use crate::autodiff::{AdamState, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{normal, LabRng};
use crate::tensor::Tensor;

pub const NOISE_DIM: usize = 64;
pub const HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanPair {
    /// noise -> [0,1]^dim, sigmoid output.
    pub generator: Mlp,
    /// dim -> 1 logit; the discriminator probability is its sigmoid.
    pub discriminator: Mlp,
    pub noise_dim: usize,
}

impl GanPair {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_sizes(dim, NOISE_DIM, &HIDDEN, rng)
    }

    pub fn with_sizes(dim: usize, noise_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut gd = vec![noise_dim];
        gd.extend_from_slice(hidden);
        gd.push(dim);
        let mut dd = vec![dim];
        dd.extend_from_slice(hidden);
        dd.push(1);
        Ok(GanPair {
            generator: Mlp::init(&gd, Activation::Relu, Activation::Sigmoid, rng)?,
            discriminator: Mlp::init(&dd, Activation::Relu, Activation::Identity, rng)?,
            noise_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn noise(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        let d = (0..n * self.noise_dim).map(|_| normal(rng)).collect();
        Tensor::new(vec![n, self.noise_dim], d).expect("sized")
    }

    pub fn generate_from(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.forward(z)
    }

    pub fn generate(&self, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let z = self.noise(n, rng);
        self.generate_from(&z)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 100,
            batch: 32,
            lr: 1e-3,
        }
    }
}

/// Detectors evaluated on a fixed batch of generated samples after every
/// epoch.
pub struct GanProbe<'a> {
    pub detector: &'a AnomalyAutoencoder,
    pub classifier: &'a MlpClassifier,
    pub benign_class: usize,
    /// Fixed noise, so curves compare like with like across epochs.
    pub noise: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Mean anomaly score of the probe samples.
    pub mean_score: f64,
    /// Fraction of probe samples the anomaly detector accepts.
    pub anomaly_er: f64,
    /// Fraction of probe samples the classifier flags as malicious.
    pub classifier_acc: f64,
}

/// Mean binary cross entropy of logits against a constant label.
fn bce_logits(g: &mut Graph, logits: NodeId, target_one: bool) -> Result<NodeId> {
    // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z).
    let z = if target_one { g.neg(logits)? } else { logits };
    let sp = softplus_graph(g, z)?;
    g.mean(sp)
}

/// Alternating 1:1 discriminator/generator updates with the
/// non-saturating generator loss.
pub struct GanTrainer {
    pub gan: GanPair,
    cfg: GanTrainConfig,
    g_params: Vec<Tensor>,
    d_params: Vec<Tensor>,
    g_adam: AdamState,
    d_adam: AdamState,
    epoch: usize,
}

impl GanTrainer {
    pub fn new(gan: GanPair, cfg: GanTrainConfig) -> Self {
        let g_params = gan.generator.params.to_tensors();
        let d_params = gan.discriminator.params.to_tensors();
        GanTrainer {
            g_adam: AdamState::for_tensors(&g_params),
            d_adam: AdamState::for_tensors(&d_params),
            g_params,
            d_params,
            gan,
            cfg,
            epoch: 0,
        }
    }

    /// One pass over `benign`; returns mean (discriminator, generator) loss.
    pub fn epoch(&mut self, benign: &Tensor, rng: &mut LabRng) -> Result<(f64, f64)> {
        if benign.rows() < 2 {
            return Err(Error::Empty(format!(
                "GAN training needs at least 2 benign samples, got {}",
                benign.rows()
            )));
        }
        let mut idx: Vec<usize> = (0..benign.rows()).collect();
        idx.shuffle(rng);
        let (mut dl, mut gl, mut steps) = (0.0, 0.0, 0usize);
        for chunk in idx.chunks(self.cfg.batch.max(1)) {
            let real = benign.select_rows(chunk);
            let m = chunk.len();

            // Discriminator step on real vs detached fakes.
            let fake = self.gan.generate(m, rng)?;
            let mut g = Graph::new();
            let dp = self.gan.discriminator.bind(&mut g);
            let rn = g.constant(real);
            let fnode = g.constant(fake);
            let dr = self.gan.discriminator.forward_graph(&mut g, &dp, rn)?;
            let df = self.gan.discriminator.forward_graph(&mut g, &dp, fnode)?;
            let lr_ = bce_logits(&mut g, dr, true)?;
            let lf = bce_logits(&mut g, df, false)?;
            let ld = g.add(lr_, lf)?;
            dl += g.value(ld).item();
            let grads = g.gradients(ld, &flat_handles(&dp))?;
            self.d_adam.step(&mut self.d_params, &grads, self.cfg.lr)?;
            self.gan.discriminator.set_from_tensors(self.d_params.clone())?;

            // Generator step through the updated discriminator.
            let z = self.gan.noise(m, rng);
            let mut g = Graph::new();
            let gp = self.gan.generator.bind(&mut g);
            let dp = self.gan.discriminator.bind(&mut g);
            let zn = g.constant(z);
            let x = self.gan.generator.forward_graph(&mut g, &gp, zn)?;
            let d = self.gan.discriminator.forward_graph(&mut g, &dp, x)?;
            let lg = bce_logits(&mut g, d, true)?;
            gl += g.value(lg).item();
            let grads = g.gradients(lg, &flat_handles(&gp))?;
            self.g_adam.step(&mut self.g_params, &grads, self.cfg.lr)?;
            self.gan.generator.set_from_tensors(self.g_params.clone())?;
            steps += 1;
        }
        self.epoch += 1;
        Ok((dl / steps as f64, gl / steps as f64))
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }
}

pub fn probe_samples(gan: &GanPair, probe: &GanProbe<'_>) -> Result<(f64, f64, f64)> {
    let x = gan.generate_from(&probe.noise)?;
    let scores = probe.detector.anomaly_score(&x)?;
    let n = scores.len().max(1) as f64;
    let mean_score = scores.iter().sum::<f64>() / n;
    let accepted = scores.iter().filter(|&&s| s < probe.detector.threshold).count() as f64 / n;
    let pred = probe.classifier.predict(&x)?;
    let flagged = pred.iter().filter(|&&c| c != probe.benign_class).count() as f64 / n;
    Ok((mean_score, accepted, flagged))
}

/// Trains `gan` on benign rows, evaluating `probe` after every epoch.
pub fn gan_train(
    gan: GanPair,
    benign: &Tensor,
    cfg: GanTrainConfig,
    probe: Option<&GanProbe<'_>>,
    rng: &mut LabRng,
) -> Result<(GanPair, Vec<EpochDiagnostics>)> {
    if benign.rows() < 2 {
        return Err(Error::Empty(format!(
            "GAN training needs at least 2 benign samples, got {}",
            benign.rows()
        )));
    }
    let mut tr = GanTrainer::new(gan, cfg);
    let mut diags = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let (d_loss, g_loss) = tr.epoch(benign, rng)?;
        let (mean_score, anomaly_er, classifier_acc) = match probe {
            Some(p) => probe_samples(&tr.gan, p)?,
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        diags.push(EpochDiagnostics {
            epoch: e + 1,
            d_loss,
            g_loss,
            mean_score,
            anomaly_er,
            classifier_acc,
        });
    }
    Ok((tr.gan, diags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_epochs_is_untrained_generator() {
        let mut rng = stream(2, &[]);
        let gan = GanPair::with_sizes(3, 4, &[8], &mut rng).unwrap();
        let benign = Tensor::full(&[4, 3], 0.5);
        let cfg = GanTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (trained, d) = gan_train(gan.clone(), &benign, cfg, None, &mut rng).unwrap();
        assert!(d.is_empty());
        let z = gan.noise(5, &mut stream(9, &[]));
        assert_eq!(trained.generate_from(&z).unwrap(), gan.generate_from(&z).unwrap());
    }

    #[test]
    fn needs_two_samples() {
        let mut rng = stream(2, &[]);
        let gan = GanPair::with_sizes(3, 4, &[8], &mut rng).unwrap();
        let cfg = GanTrainConfig::default();
        assert!(matches!(
            gan_train(gan, &Tensor::full(&[1, 3], 0.5), cfg, None, &mut rng),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn samples_in_unit_box() {
        let mut rng = stream(4, &[]);
        let gan = GanPair::new(6, &mut rng).unwrap();
        let x = gan.generate(50, &mut rng).unwrap();
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
