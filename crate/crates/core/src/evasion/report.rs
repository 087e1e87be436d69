//! Per-sample evasion records and their aggregate.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Victim;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub adversarial: Vec<f64>,
    pub evaded: bool,
    pub l2: f64,
    pub linf: f64,
    /// Benign-class probability for the classifier, RMSE for the detector.
    pub score: f64,
}

/// One aggregate row: a (defense, victim, attack, budget) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvasionSummary {
    pub defense: String,
    pub victim: String,
    pub attack: String,
    /// Name of the budget parameter, `epsilon_255` or `c`.
    pub budget_name: String,
    pub budget: f64,
    pub n: usize,
    pub evaded: usize,
    pub evasion_rate: f64,
    /// Fraction still flagged as malicious; classifier only.
    pub acc_dnn: Option<f64>,
    /// Mean anomaly score; detector only.
    pub mean_score: Option<f64>,
    pub mean_l2: f64,
    pub mean_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvasionReport {
    pub summary: EvasionSummary,
    pub samples: Vec<SampleRecord>,
}

/// Labels attached to a report cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTags {
    pub defense: String,
    pub attack: String,
    pub budget_name: String,
    pub budget: f64,
}

impl EvasionReport {
    /// Scores adversarial rows against the victim. `original` supplies the
    /// reference rows for the perturbation norms.
    pub fn evaluate(
        victim: &Victim<'_>,
        original: &Tensor,
        adversarial: &Tensor,
        target: usize,
        tags: CellTags,
    ) -> Result<Self> {
        if original.shape() != adversarial.shape() {
            return Err(Error::Shape {
                op: "evasion_report",
                lhs: original.shape().to_vec(),
                rhs: adversarial.shape().to_vec(),
            });
        }
        let n = adversarial.rows();
        let (evaded, score): (Vec<bool>, Vec<f64>) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            match victim {
                Victim::Classifier(m) => {
                    let probs = m.classify(adversarial)?;
                    let pred = probs.argmax_rows();
                    let ev = pred.iter().map(|&p| p == target).collect();
                    let sc = (0..n).map(|i| probs.row(i)[target]).collect();
                    (ev, sc)
                }
                Victim::Anomaly(a) => {
                    let s = a.anomaly_score(adversarial)?;
                    (s.iter().map(|&v| v < a.threshold).collect(), s)
                }
            }
        };
        let samples: Vec<SampleRecord> = (0..n)
            .map(|i| {
                let d: Vec<f64> = adversarial
                    .row(i)
                    .iter()
                    .zip(original.row(i))
                    .map(|(a, b)| a - b)
                    .collect();
                SampleRecord {
                    index: i,
                    adversarial: adversarial.row(i).to_vec(),
                    evaded: evaded[i],
                    l2: d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    linf: d.iter().fold(0.0, |m, v| m.max(v.abs())),
                    score: score[i],
                }
            })
            .collect();
        let hits = evaded.iter().filter(|&&e| e).count();
        let denom = n.max(1) as f64;
        let mean = |f: &dyn Fn(&SampleRecord) -> f64| samples.iter().map(f).sum::<f64>() / denom;
        let (acc_dnn, mean_score) = match victim {
            Victim::Classifier(_) => (Some((n - hits) as f64 / denom), None),
            Victim::Anomaly(_) => (None, Some(mean(&|s| s.score))),
        };
        let summary = EvasionSummary {
            defense: tags.defense,
            victim: victim.label().into(),
            attack: tags.attack,
            budget_name: tags.budget_name,
            budget: tags.budget,
            n,
            evaded: hits,
            evasion_rate: hits as f64 / denom,
            acc_dnn,
            mean_score,
            mean_l2: mean(&|s| s.l2),
            mean_linf: mean(&|s| s.linf),
        };
        Ok(EvasionReport { summary, samples })
    }
}

/// One JSON object per sample, tagged with its cell.
pub fn write_evasion_jsonl(path: &Path, reports: &[EvasionReport]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        defense: &'a str,
        victim: &'a str,
        attack: &'a str,
        budget: f64,
        #[serde(flatten)]
        sample: &'a SampleRecord,
    }
    let mut out = Vec::new();
    for r in reports {
        for s in &r.samples {
            let line = Line {
                defense: &r.summary.defense,
                victim: &r.summary.victim,
                attack: &r.summary.attack,
                budget: r.summary.budget,
                sample: s,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const EVASION_CSV_HEADER: [&str; 12] = [
    "defense",
    "victim",
    "attack",
    "budget_name",
    "budget",
    "n",
    "evaded",
    "evasion_rate",
    "acc_dnn",
    "mean_score",
    "mean_l2",
    "mean_linf",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_evasion_csv(w: impl Write, summaries: &[EvasionSummary]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(EVASION_CSV_HEADER)?;
    for s in summaries {
        wr.write_record([
            s.defense.clone(),
            s.victim.clone(),
            s.attack.clone(),
            s.budget_name.clone(),
            s.budget.to_string(),
            s.n.to_string(),
            s.evaded.to_string(),
            s.evasion_rate.to_string(),
            opt(s.acc_dnn),
            opt(s.mean_score),
            s.mean_l2.to_string(),
            s.mean_linf.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AnomalyAutoencoder, MlpClassifier};
    use crate::rng::{stream, uniform};

    fn tags() -> CellTags {
        CellTags {
            defense: "none".into(),
            attack: "pgd".into(),
            budget_name: "epsilon_255".into(),
            budget: 40.0,
        }
    }

    fn rows(n: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, &[]);
        Tensor::new(
            vec![n, dim],
            (0..n * dim).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn classifier_rates_are_complementary() {
        for n in 1..=100 {
            let m = MlpClassifier::new(4, 3, &mut stream(n as u64, &[])).unwrap();
            let x = rows(n, 4, n as u64);
            let r = EvasionReport::evaluate(&Victim::Classifier(&m), &x, &x, 0, tags()).unwrap();
            let s = &r.summary;
            assert_eq!(s.evasion_rate + s.acc_dnn.unwrap(), 1.0, "n = {n}");
            assert_eq!(s.evaded, r.samples.iter().filter(|r| r.evaded).count());
            assert_eq!(s.mean_l2, 0.0);
        }
    }

    #[test]
    fn anomaly_rate_counts_scores_below_threshold() {
        let mut ae = AnomalyAutoencoder::new(5, &mut stream(1, &[])).unwrap();
        let x = rows(40, 5, 2);
        let scores = ae.anomaly_score(&x).unwrap();
        ae.threshold = crate::nn::autoencoder::quantile_of(&scores, 0.5);
        let r = EvasionReport::evaluate(&Victim::Anomaly(&ae), &x, &x, 0, tags()).unwrap();
        let below = scores.iter().filter(|&&s| s < ae.threshold).count();
        assert_eq!(r.summary.evaded, below);
        assert_eq!(r.summary.evasion_rate, below as f64 / 40.0);
        assert!(r.summary.acc_dnn.is_none());
    }

    #[test]
    fn norms_are_measured_against_the_original() {
        let m = MlpClassifier::new(2, 2, &mut stream(1, &[])).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let a = Tensor::matrix(1, 2, vec![0.3, 0.4]).unwrap();
        let r = EvasionReport::evaluate(&Victim::Classifier(&m), &x, &a, 0, tags()).unwrap();
        assert!((r.samples[0].l2 - 0.5).abs() < 1e-15);
        assert_eq!(r.samples[0].linf, 0.4);
    }

    #[test]
    fn empty_pool_gives_headers_only() {
        let m = MlpClassifier::new(3, 2, &mut stream(1, &[])).unwrap();
        let x = Tensor::zeros(&[0, 3]);
        let r = EvasionReport::evaluate(&Victim::Classifier(&m), &x, &x, 0, tags()).unwrap();
        assert_eq!(r.summary.evasion_rate, 0.0);
        let mut buf = Vec::new();
        write_evasion_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn jsonl_has_one_line_per_sample() {
        let m = MlpClassifier::new(3, 2, &mut stream(1, &[])).unwrap();
        let x = rows(7, 3, 3);
        let r = EvasionReport::evaluate(&Victim::Classifier(&m), &x, &x, 0, tags()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write_evasion_jsonl(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["attack"], "pgd");
        assert_eq!(v["index"], 0);
    }
}
