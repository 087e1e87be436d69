//! Black-box evasion: a GAN fitted to recovered benign traffic.
//!
//! The adversary keeps the reconstructions whose recovered label is benign,
//! trains a generator on them, and measures after every epoch how a fixed
//! batch of generated rows fares against both detectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gan_train, AnomalyAutoencoder, EpochDiagnostics, GanPair, GanProbe, GanTrainConfig, MlpClassifier};
use crate::rng::LabRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackBoxConfig {
    pub epochs: usize,
    /// Generated rows evaluated per epoch.
    pub samples: usize,
    pub batch: usize,
    pub lr: f64,
    pub benign_class: usize,
}

impl Default for BlackBoxConfig {
    fn default() -> Self {
        BlackBoxConfig {
            epochs: 100,
            samples: 100,
            batch: 32,
            lr: 1e-3,
            benign_class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxReport {
    pub benign_used: usize,
    pub curves: Vec<EpochDiagnostics>,
    /// Fraction of final generated rows the classifier calls benign.
    pub classifier_er: f64,
    /// Fraction of final generated rows under the anomaly threshold.
    pub anomaly_er: f64,
}

/// Benign rows of a reconstruction pool, selected by recovered label.
pub fn benign_rows(x: &Tensor, labels: &[usize], benign_class: usize) -> Result<Tensor> {
    if labels.len() != x.rows() {
        return Err(Error::Shape {
            op: "benign_rows",
            lhs: x.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == benign_class).collect();
    Ok(x.select_rows(&idx))
}

pub fn blackbox_gan(
    recon_x: &Tensor,
    recon_labels: &[usize],
    classifier: &MlpClassifier,
    detector: &AnomalyAutoencoder,
    cfg: &BlackBoxConfig,
    rng: &mut LabRng,
) -> Result<BlackBoxReport> {
    let benign = benign_rows(recon_x, recon_labels, cfg.benign_class)?;
    if benign.rows() < 2 {
        return Err(Error::EmptyBenign { found: benign.rows() });
    }
    let gan = GanPair::new(benign.cols(), rng)?;
    let probe = GanProbe {
        detector,
        classifier,
        benign_class: cfg.benign_class,
        noise: gan.noise(cfg.samples, rng),
    };
    let tc = GanTrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
    };
    let (_, curves) = gan_train(gan, &benign, tc, Some(&probe), rng)?;
    let (classifier_er, anomaly_er) = curves
        .last()
        .map(|d| (1.0 - d.classifier_acc, d.anomaly_er))
        .unwrap_or((0.0, 0.0));
    Ok(BlackBoxReport {
        benign_used: benign.rows(),
        curves,
        classifier_er,
        anomaly_er,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};
    use crate::rng::stream;

    #[test]
    fn no_benign_rows_is_an_explicit_failure() {
        let mut rng = stream(1, &[]);
        let clf = MlpClassifier::new(3, 2, &mut rng).unwrap();
        let ae = AnomalyAutoencoder::new(3, &mut rng).unwrap();
        let x = Tensor::full(&[4, 3], 0.5);
        let err = blackbox_gan(&x, &[1, 1, 1, 1], &clf, &ae, &BlackBoxConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyBenign { found: 0 }));
    }

    #[test]
    fn generator_learns_clean_benign_traffic() {
        let data = synth_dataset(&SynthConfig {
            dim: 8,
            rows: 400,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let benign = benign_rows(&data.x, &data.labels(), data.benign_class).unwrap();
        let mut rng = stream(4, &[]);
        let clf = MlpClassifier::new(8, 2, &mut rng).unwrap();
        let mut ae = AnomalyAutoencoder::new(8, &mut rng).unwrap();
        ae.train(&benign, 30, 32, 1e-2, &mut rng).unwrap();
        ae.calibrate_threshold(&benign, 0.95).unwrap();
        let benign_mean = ae.anomaly_score(&benign).unwrap().iter().sum::<f64>() / benign.rows() as f64;
        let pool = benign.select_rows(&(0..100).collect::<Vec<_>>());
        let labels = vec![data.benign_class; 100];
        let r = blackbox_gan(&pool, &labels, &clf, &ae, &BlackBoxConfig::default(), &mut rng).unwrap();
        assert_eq!(r.curves.len(), 100);
        let last = r.curves.last().unwrap();
        assert!(
            last.mean_score < 2.0 * benign_mean,
            "generated {} vs benign {}",
            last.mean_score,
            benign_mean
        );
    }
}
