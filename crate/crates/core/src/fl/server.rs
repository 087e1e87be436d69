use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::aggregate;
use super::client::{local_update, LocalOptimizer};
use super::tags;
use crate::data::Dataset;
use crate::defense::DefenseKind;
use crate::error::{Error, Result};
use crate::nn::MlpClassifier;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub clients: usize,
    /// Clients sampled per round, with replacement.
    pub sampled: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub local_bs: usize,
    pub lr: f64,
    /// Learning-rate factor applied every `decay_every` rounds.
    pub decay: f64,
    pub decay_every: usize,
    /// Sampling weights; empty means uniform.
    pub weights: Vec<f64>,
    pub optimizer: LocalOptimizer,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            clients: 10,
            sampled: 10,
            local_steps: 1,
            rounds: 100,
            local_bs: 64,
            lr: 1e-3,
            decay: 1.0,
            decay_every: 20,
            weights: Vec::new(),
            optimizer: LocalOptimizer::Adam,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.clients == 0 {
            e.push("fl.clients must be >= 1".into());
        }
        if self.sampled == 0 || self.sampled > self.clients {
            e.push(format!(
                "fl.sampled must be in 1..={}, got {}",
                self.clients, self.sampled
            ));
        }
        if self.local_steps == 0 {
            e.push("fl.local_steps must be >= 1".into());
        }
        if self.local_bs == 0 {
            e.push("fl.local_bs must be >= 1".into());
        }
        if !(self.lr >= 0.0) {
            e.push(format!("fl.lr must be >= 0, got {}", self.lr));
        }
        if !(self.decay > 0.0) || self.decay_every == 0 {
            e.push("fl.decay must be > 0 and fl.decay_every >= 1".into());
        }
        if !self.weights.is_empty() {
            let s: f64 = self.weights.iter().sum();
            if self.weights.len() != self.clients {
                e.push(format!(
                    "fl.weights has {} entries for {} clients",
                    self.weights.len(),
                    self.clients
                ));
            } else if self.weights.iter().any(|w| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                e.push(format!("fl.weights must be non-negative and sum to 1, sum is {s}"));
            }
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.validation_errors();
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    pub fn client_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0 / self.clients as f64; self.clients]
        } else {
            self.weights.clone()
        }
    }

    /// Learning rate used in round `r` (0-based).
    pub fn lr_at(&self, r: usize) -> f64 {
        self.lr * self.decay.powi((r / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: Vec<usize>,
    pub test_accuracy: f64,
    pub mean_loss: f64,
    pub lr: f64,
    /// Not part of any deterministic export.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpClassifier,
    pub rounds: Vec<RoundRecord>,
}

/// `k` client indices drawn with replacement from `weights`.
pub fn sample_clients(weights: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Invalid(format!("client weights: {e}")))?;
    Ok((0..k).map(|_| dist.sample(rng)).collect())
}

/// Runs FedAvg from `init`. Test accuracy uses the undefended test rows.
pub fn train(
    cfg: &FlConfig,
    init: &MlpClassifier,
    shards: &[Dataset],
    test: &Dataset,
    defense: &DefenseKind,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    defense.validate()?;
    if shards.len() != cfg.clients {
        return Err(Error::Invalid(format!(
            "{} shards for {} clients",
            shards.len(),
            cfg.clients
        )));
    }
    let weights = cfg.client_weights();
    let mut model = init.clone();
    let mut records = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let t0 = Instant::now();
        let lr = cfg.lr_at(r);
        let picked = sample_clients(&weights, cfg.sampled, &mut stream(cfg.seed, &[tags::SAMPLE, r as u64]))?;
        // Each client's stream depends only on (seed, round, client), so a
        // client drawn twice produces the same model twice.
        let mut updates = BTreeMap::new();
        for &c in &picked {
            if updates.contains_key(&c) {
                continue;
            }
            let mut rng = stream(cfg.seed, &[tags::CLIENT, r as u64, c as u64]);
            let u = local_update(
                &model,
                &shards[c],
                defense,
                cfg.local_steps,
                cfg.local_bs,
                lr,
                cfg.optimizer,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::NonFinite { context, index } => Error::NonFinite {
                    context: format!("{context}, round {r}, client {c}"),
                    index,
                },
                other => other,
            })?;
            updates.insert(c, u);
        }
        let params: Vec<_> = picked.iter().map(|c| &updates[c].model.net.params).collect();
        model.net.params = aggregate(&params)?;
        let mean_loss = picked.iter().map(|c| updates[c].mean_loss).sum::<f64>() / picked.len() as f64;
        let test_accuracy = model.accuracy(&test.x, &test.y)?;
        records.push(RoundRecord {
            round: r + 1,
            sampled: picked,
            test_accuracy,
            mean_loss,
            lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(TrainOutcome { model, rounds: records })
}

/// `round,acc,loss,lr` rows.
pub fn write_rounds_csv(w: impl Write, rounds: &[RoundRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["round", "acc", "loss", "lr"])?;
    for r in rounds {
        out.write_record([
            r.round.to_string(),
            r.test_accuracy.to_string(),
            r.mean_loss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<rounds>", e))?;
    Ok(())
}
