//! The three experiment families: FedAvg training, gradient-leakage
//! privacy probes, and evasion with recovered traffic.
//!
//! Every random draw comes from a stream keyed by (seed, purpose, index),
//! so any cell can be recomputed in isolation and results do not depend on
//! the order in which cells run.

use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::config::{DatasetSpec, ExperimentConfig, Normalization, Stage};
use super::report::{
    AccuracySummary, BlackBoxOutcome, CurveRow, EvasionCell, ExperimentReport, PoolSummary, PrivacyRow, PrivacySummary,
    RoundRow, RunKind, SavedModel, Theorem3Row, Timing,
};
use crate::attack::{reconstruct, InversionConfig, LeakedUpdate, Method};
use crate::data::{
    canonicalize, ingest_csv, kdd99_like, partition, synth_dataset, Dataset, FeatureSchema, IngestOptions, SynthConfig,
};
use crate::defense::{feddef_transform, DefenseKind};
use crate::error::{Error, Result};
use crate::evasion::report::CellTags;
use crate::evasion::{attack_rows, blackbox_gan, AttackConfig, AttackKind, BlackBoxConfig, EvasionReport, Victim};
use crate::fl::{defended_gradient, tags as fl_tags, train};
use crate::metrics::{label_accuracy, privacy_score, theorem3_check, Theorem3Inputs};
use crate::nn::{checkpoint, AnomalyAutoencoder, GradientVector, MlpClassifier};
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;

/// Stream tags for experiment-level randomness.
mod tags {
    pub const DATA: u64 = 10;
    pub const SPLIT: u64 = 11;
    pub const PARTITION: u64 = 12;
    pub const PROBE: u64 = 13;
    pub const DEFENSE: u64 = 14;
    pub const ATTACK: u64 = 15;
    pub const DETECTOR: u64 = 16;
    pub const GAN: u64 = 17;
    pub const EVASION: u64 = 18;
}

/// Data for one seed: global train/test split and client shards.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<Dataset>,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let data_seed = derive_seed(seed, &[tags::DATA]);
    let (train_d, test) = match &cfg.dataset {
        DatasetSpec::Synth { params } => {
            let d = synth_dataset(&SynthConfig {
                seed: data_seed,
                ..params.clone()
            })?;
            d.split(cfg.train_fraction, &mut stream(seed, &[tags::SPLIT]))
        }
        DatasetSpec::Kdd99Like { rows } => {
            kdd99_like(*rows, data_seed)?.split(cfg.train_fraction, &mut stream(seed, &[tags::SPLIT]))
        }
        DatasetSpec::Csv { path, schema, ingest } => {
            let schema = FeatureSchema::load(schema)?;
            let ing = ingest_csv(
                path,
                &schema,
                &IngestOptions {
                    seed: data_seed,
                    ..ingest.clone()
                },
            )?;
            (ing.train, ing.test)
        }
    };
    let plan = partition(
        &train_d,
        cfg.fl.clients,
        cfg.partition,
        &mut stream(seed, &[tags::PARTITION]),
    )?;
    let mut shards = plan.shards(&train_d);
    if cfg.normalization == Normalization::PerClient {
        shards = shards.iter().map(Dataset::renormalized).collect();
    }
    Ok(Prepared {
        train: train_d,
        test,
        shards,
    })
}

pub fn initial_model(data: &Dataset, seed: u64) -> Result<MlpClassifier> {
    MlpClassifier::new(data.dim(), data.n_classes(), &mut stream(seed, &[fl_tags::INIT]))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, var.sqrt())
}

fn timed<T>(report: &mut ExperimentReport, phase: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    report.timings.push(Timing {
        phase,
        seconds: t.elapsed().as_secs_f64(),
    });
    out
}

/// FedAvg training for every (defense, seed); reports per-round accuracy
/// and mean with sample standard deviation of the final accuracy.
pub fn run_train(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(RunKind::Train, cfg.clone());
    let mut finals: Vec<Vec<(u64, f64)>> = vec![Vec::new(); cfg.defenses.len()];
    for &seed in &cfg.seeds {
        let data = prepare(cfg, seed)?;
        let init = initial_model(&data.train, seed)?;
        for (di, entry) in cfg.defenses.iter().enumerate() {
            let label = entry.kind.label();
            let fl = cfg.fl_for(entry, seed);
            let outcome = timed(&mut report, format!("train {label} seed {seed}"), || {
                train(&fl, &init, &data.shards, &data.test, &entry.kind)
            })?;
            let fin = outcome.rounds.last().map(|r| r.test_accuracy).unwrap_or(0.0);
            let finite = outcome
                .rounds
                .iter()
                .all(|r| r.test_accuracy.is_finite() && r.mean_loss.is_finite());
            report.check(
                format!("finite metrics: {label} seed {seed}"),
                finite,
                format!("final accuracy {fin}"),
            );
            report.rounds.extend(outcome.rounds.iter().map(|r| RoundRow {
                defense: label.clone(),
                seed,
                round: r.round,
                accuracy: r.test_accuracy,
                loss: r.mean_loss,
                lr: r.lr,
            }));
            finals[di].push((seed, fin));
            report.models.push(SavedModel {
                defense: label,
                seed,
                model: outcome.model,
            });
        }
    }
    for (entry, per_seed) in cfg.defenses.iter().zip(finals) {
        let vals: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
        let (mean, sd) = mean_sd(&vals);
        report.accuracy.push(AccuracySummary {
            defense: entry.kind.label(),
            runs: vals.len(),
            mean,
            sd,
            per_seed,
        });
    }
    Ok(report)
}

/// First-layer (weight gap, bias gap, |db|, |db'|).
fn first_layer_gaps(real: &GradientVector, pseudo: &GradientVector) -> Result<(f64, f64, f64, f64)> {
    let (r, p) = (&real.layers[0], &pseudo.layers[0]);
    Ok((
        p.weight.sub(&r.weight)?.l2_norm(),
        p.bias.sub(&r.bias)?.l2_norm(),
        r.bias.l2_norm(),
        p.bias.l2_norm(),
    ))
}

struct Probe {
    shared: GradientVector,
    /// For FedDef: (real gradient, pseudo gradient, |x' - x|).
    feddef: Option<(GradientVector, GradientVector, f64)>,
}

fn defend_one(model: &MlpClassifier, x: &Tensor, y: &Tensor, kind: &DefenseKind, seed: u64, p: usize) -> Result<Probe> {
    let mut rng = stream(seed, &[tags::DEFENSE, p as u64]);
    if let DefenseKind::Feddef(fc) = kind {
        let out = feddef_transform(model, x, y, fc, &mut rng)?;
        let real = model.gradient(x, y)?;
        return Ok(Probe {
            shared: out.gradient.clone(),
            feddef: Some((real, out.gradient, out.input_distance)),
        });
    }
    Ok(Probe {
        shared: defended_gradient(model, x, y, kind, &mut rng)?,
        feddef: None,
    })
}

fn load_late_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<MlpClassifier> {
    let path = cfg
        .privacy
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Invalid("late-stage probing needs privacy.checkpoint".into()))?;
    let (_, net) = checkpoint::load(path)?;
    let m = MlpClassifier::from_mlp(net);
    if m.dim() != data.dim() || m.n_classes() != data.n_classes() {
        return Err(Error::Architecture(format!(
            "checkpoint {} is {}->{}, data is {}->{}",
            path.display(),
            m.dim(),
            m.n_classes(),
            data.dim(),
            data.n_classes()
        )));
    }
    Ok(m)
}

/// Single-row gradient leakage against a frozen global model: every probe
/// is defended, leaked, reconstructed and scored.
pub fn run_privacy(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.privacy.stage == Stage::Late && cfg.privacy.checkpoint.is_none() {
        return Err(Error::Config(vec![
            "privacy.stage = \"late\" needs privacy.checkpoint".into()
        ]));
    }
    let mut report = ExperimentReport::new(RunKind::Privacy, cfg.clone());
    for &seed in &cfg.seeds {
        let data = prepare(cfg, seed)?;
        let model = match cfg.privacy.stage {
            Stage::Early => initial_model(&data.train, seed)?,
            Stage::Late => load_late_model(cfg, &data.train)?,
        };
        let n = cfg.privacy.probes.min(data.train.rows());
        let rows = sample(&mut stream(seed, &[tags::PROBE]), data.train.rows(), n).into_vec();
        for entry in &cfg.defenses {
            let label = entry.kind.label();
            let t = Instant::now();
            let mut scores = Vec::new();
            let (mut truth, mut rec) = (Vec::new(), Vec::new());
            let (mut failed, mut extracted, mut illegal) = (0, 0, 0);
            let mut bound_inputs = Vec::new();
            for (p, &row) in rows.iter().enumerate() {
                let x = data.train.x.select_rows(&[row]);
                let y = data.train.y.select_rows(&[row]);
                let true_label = data.train.y.argmax_rows()[row];
                let probe = defend_one(&model, &x, &y, &entry.kind, seed, p)?;
                if let Some(fd) = probe.feddef {
                    bound_inputs.push((p, fd));
                }
                let update = LeakedUpdate {
                    gradient: probe.shared,
                    batch_hint: 1,
                };
                let mut arng = stream(seed, &[tags::ATTACK, p as u64]);
                match reconstruct(&update, &model, &cfg.privacy.inversion, &data.train.schema, &mut arng) {
                    Ok(r) => {
                        let s = privacy_score(x.row(0), r.x.row(0), &data.train.schema)?;
                        if canonicalize(r.x.row(0), &data.train.schema) != r.x.row(0) {
                            illegal += 1;
                        }
                        if r.method == Method::Extraction {
                            extracted += 1;
                        }
                        scores.push(s);
                        truth.push(true_label);
                        rec.push(r.labels[0]);
                        report.privacy.push(PrivacyRow {
                            defense: label.clone(),
                            seed,
                            probe: p,
                            row,
                            method: r.method.as_str().into(),
                            score: Some(s),
                            true_label,
                            recovered_label: Some(r.labels[0]),
                            objective: Some(r.objective),
                        });
                    }
                    Err(Error::ReconstructionFailed { .. }) => {
                        failed += 1;
                        report.privacy.push(PrivacyRow {
                            defense: label.clone(),
                            seed,
                            probe: p,
                            row,
                            method: "failed".into(),
                            score: None,
                            true_label,
                            recovered_label: None,
                            objective: None,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            let mean_score = mean_sd(&scores).0;
            let label_acc = if truth.is_empty() {
                0.0
            } else {
                label_accuracy(&rec, &truth)?
            };
            report.check(
                format!("scores in [0,1]: {label} seed {seed}"),
                scores.iter().all(|s| (0.0..=1.0).contains(s)),
                format!("mean {mean_score}"),
            );
            report.check(
                format!("schema-legal reconstructions: {label} seed {seed}"),
                illegal == 0,
                format!("{illegal} rows not canonical"),
            );
            if !bound_inputs.is_empty() {
                let mut gaps = Vec::new();
                let mut m = 0.0f64;
                for (p, (real, pseudo, dist)) in &bound_inputs {
                    let g = first_layer_gaps(real, pseudo)?;
                    m = m.max(g.2).max(g.3);
                    gaps.push((*p, g, *dist));
                }
                let mut held = 0;
                for (p, (wg, bg, bn, pbn), dist) in gaps {
                    let o = theorem3_check(&Theorem3Inputs {
                        weight_gap: wg,
                        bias_gap: bg,
                        bias_norm: bn,
                        pseudo_bias_norm: pbn,
                        m,
                        input_distance: dist,
                    })?;
                    held += usize::from(o.holds);
                    report.theorem3.push(Theorem3Row {
                        defense: label.clone(),
                        seed,
                        probe: p,
                        lower_bound: o.lower_bound,
                        input_distance: o.input_distance,
                        m,
                        holds: o.holds,
                    });
                }
                report.check(
                    format!("input-distance lower bound: {label} seed {seed}"),
                    held == bound_inputs.len(),
                    format!("{held}/{} outputs respect the bound, M = {m}", bound_inputs.len()),
                );
            }
            report.privacy_summary.push(PrivacySummary {
                defense: label.clone(),
                seed,
                probes: rows.len(),
                failed,
                extracted,
                mean_score,
                label_accuracy: label_acc,
            });
            report.timings.push(Timing {
                phase: format!("privacy {label} seed {seed}"),
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(report)
}

/// Recovered rows split by recovered label.
pub struct Pools {
    pub malicious: Tensor,
    pub benign: Tensor,
    pub benign_labels: Vec<usize>,
    pub probes: usize,
    pub mean_score: f64,
    pub label_accuracy: f64,
}

/// Probes training rows in a seeded order until both pools hold `pool`
/// rows or the probe budget runs out.
pub fn recover_pools(
    model: &MlpClassifier,
    data: &Dataset,
    kind: &DefenseKind,
    inversion: &InversionConfig,
    pool: usize,
    max_probes: usize,
    seed: u64,
) -> Result<Pools> {
    let mut order: Vec<usize> = (0..data.rows()).collect();
    order.shuffle(&mut stream(seed, &[tags::PROBE]));
    let dim = data.dim();
    let (mut mal, mut ben) = (Vec::new(), Vec::new());
    let (mut n_mal, mut n_ben) = (0, 0);
    let (mut scores, mut truth, mut rec) = (Vec::new(), Vec::new(), Vec::new());
    let labels = data.labels();
    let mut probes = 0;
    for (p, &row) in order.iter().enumerate().take(max_probes) {
        if n_mal >= pool && n_ben >= pool {
            break;
        }
        probes += 1;
        let x = data.x.select_rows(&[row]);
        let y = data.y.select_rows(&[row]);
        let probe = defend_one(model, &x, &y, kind, seed, p)?;
        let update = LeakedUpdate {
            gradient: probe.shared,
            batch_hint: 1,
        };
        let mut arng = stream(seed, &[tags::ATTACK, p as u64]);
        let r = match reconstruct(&update, model, inversion, &data.schema, &mut arng) {
            Ok(r) => r,
            Err(Error::ReconstructionFailed { .. }) => continue,
            Err(e) => return Err(e),
        };
        scores.push(privacy_score(x.row(0), r.x.row(0), &data.schema)?);
        truth.push(labels[row]);
        rec.push(r.labels[0]);
        if r.labels[0] == data.benign_class {
            if n_ben < pool {
                ben.extend_from_slice(r.x.row(0));
                n_ben += 1;
            }
        } else if n_mal < pool {
            mal.extend_from_slice(r.x.row(0));
            n_mal += 1;
        }
    }
    Ok(Pools {
        malicious: Tensor::new(vec![n_mal, dim], mal)?,
        benign: Tensor::new(vec![n_ben, dim], ben)?,
        benign_labels: vec![data.benign_class; n_ben],
        probes,
        mean_score: mean_sd(&scores).0,
        label_accuracy: if truth.is_empty() {
            0.0
        } else {
            label_accuracy(&rec, &truth)?
        },
    })
}

/// Defender's anomaly detector, trained on benign training rows.
pub fn train_detector(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<AnomalyAutoencoder> {
    let idx: Vec<usize> = (0..data.rows())
        .filter(|&i| data.labels()[i] == data.benign_class)
        .collect();
    let benign = data.x.select_rows(&idx);
    let d = &cfg.evasion.detector;
    let mut rng = stream(seed, &[tags::DETECTOR]);
    let mut ae = AnomalyAutoencoder::new(data.dim(), &mut rng)?;
    ae.train(&benign, d.epochs, d.batch, d.lr, &mut rng)?;
    ae.calibrate_threshold(&benign, d.quantile)?;
    Ok(ae)
}

/// (attack config, budget name, budget) cells for one attack kind.
fn budgets(base: &AttackConfig, kind: AttackKind, pgd: &[f64], cw: &[f64]) -> Vec<(AttackConfig, &'static str, f64)> {
    let with = |f: &dyn Fn(&mut AttackConfig)| {
        let mut c = base.clone();
        c.kind = kind;
        f(&mut c);
        c
    };
    match kind {
        AttackKind::Pgd if !pgd.is_empty() => pgd
            .iter()
            .map(|&e| (with(&|c| c.epsilon_255 = e), "epsilon_255", e))
            .collect(),
        AttackKind::Cw if !cw.is_empty() => cw.iter().map(|&v| (with(&|c| c.c = v), "c", v)).collect(),
        AttackKind::Cw => vec![(with(&|_| ()), "c", base.c)],
        _ => vec![(with(&|_| ()), "epsilon_255", base.epsilon_255)],
    }
}

/// Trains the NIDS under each defense, recovers traffic from its leaked
/// gradients, then attacks the NIDS with what was recovered.
pub fn run_evasion(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ev = &cfg.evasion;
    let mut report = ExperimentReport::new(RunKind::Evasion, cfg.clone());
    for &seed in &cfg.seeds {
        let data = prepare(cfg, seed)?;
        let init = initial_model(&data.train, seed)?;
        let detector = timed(&mut report, format!("detector seed {seed}"), || {
            train_detector(cfg, &data.train, seed)
        })?;
        for (di, entry) in cfg.defenses.iter().enumerate() {
            let label = entry.kind.label();
            let fl = cfg.fl_for(entry, seed);
            let trained = timed(&mut report, format!("train {label} seed {seed}"), || {
                train(&fl, &init, &data.shards, &data.test, &entry.kind)
            })?;
            let model = trained.model;
            let pools = timed(&mut report, format!("recover {label} seed {seed}"), || {
                recover_pools(
                    &model,
                    &data.train,
                    &entry.kind,
                    &ev.inversion,
                    ev.pool,
                    ev.pool * ev.max_probe_factor,
                    seed,
                )
            })?;
            report.pools.push(PoolSummary {
                defense: label.clone(),
                seed,
                probes: pools.probes,
                malicious: pools.malicious.rows(),
                benign: pools.benign.rows(),
                mean_score: pools.mean_score,
                label_accuracy: pools.label_accuracy,
            });

            let t = Instant::now();
            let mut base = ev.attack.clone();
            base.target = data.train.benign_class;
            let victims = [Victim::Classifier(&model), Victim::Anomaly(&detector)];
            for v in &victims {
                let clean = EvasionReport::evaluate(
                    v,
                    &pools.malicious,
                    &pools.malicious,
                    base.target,
                    CellTags {
                        defense: label.clone(),
                        attack: "clean".into(),
                        budget_name: "epsilon_255".into(),
                        budget: 0.0,
                    },
                )?;
                report.evasion.push(EvasionCell { seed, report: clean });
                for (ki, &kind) in ev.attacks.iter().enumerate() {
                    if matches!(v, Victim::Anomaly(_)) && !kind.supports_anomaly() {
                        continue;
                    }
                    for (bi, (acfg, bname, b)) in budgets(&base, kind, &ev.pgd_sweep, &ev.cw_sweep)
                        .into_iter()
                        .enumerate()
                    {
                        let mut rng = stream(seed, &[tags::EVASION, di as u64, ki as u64, bi as u64]);
                        let adv = attack_rows(v, &pools.malicious, &acfg, &mut rng)?;
                        let r = EvasionReport::evaluate(
                            v,
                            &pools.malicious,
                            &adv,
                            base.target,
                            CellTags {
                                defense: label.clone(),
                                attack: kind.label().into(),
                                budget_name: bname.into(),
                                budget: b,
                            },
                        )?;
                        let in_box = adv.data().iter().all(|a| (0.0..=1.0).contains(a));
                        let in_budget =
                            kind == AttackKind::Cw || r.samples.iter().all(|s| s.linf <= acfg.epsilon() + 1e-12);
                        let s = &r.summary;
                        let accounting = match s.acc_dnn {
                            Some(acc) => {
                                s.evaded + r.samples.iter().filter(|x| !x.evaded).count() == s.n
                                    && (acc + s.evasion_rate - 1.0).abs() <= 1e-12
                            }
                            None => s.evaded == r.samples.iter().filter(|x| x.score < detector.threshold).count(),
                        };
                        report.check(
                            format!(
                                "attack output valid: {label} {} {} {bname}={b} seed {seed}",
                                v.label(),
                                kind.label()
                            ),
                            in_box && in_budget && accounting,
                            format!("box {in_box}, budget {in_budget}, accounting {accounting}"),
                        );
                        report.evasion.push(EvasionCell { seed, report: r });
                    }
                }
            }
            report.timings.push(Timing {
                phase: format!("whitebox {label} seed {seed}"),
                seconds: t.elapsed().as_secs_f64(),
            });

            if let Some(bb) = &ev.blackbox {
                let bcfg = BlackBoxConfig {
                    benign_class: data.train.benign_class,
                    ..bb.clone()
                };
                let mut rng = stream(seed, &[tags::GAN, di as u64]);
                let t = Instant::now();
                match blackbox_gan(&pools.benign, &pools.benign_labels, &model, &detector, &bcfg, &mut rng) {
                    Ok(r) => {
                        let min_mean_score = r.curves.iter().map(|c| c.mean_score).fold(f64::INFINITY, f64::min);
                        report.curves.extend(r.curves.iter().map(|c| CurveRow {
                            defense: label.clone(),
                            seed,
                            epoch: c.epoch,
                            d_loss: c.d_loss,
                            g_loss: c.g_loss,
                            mean_score: c.mean_score,
                            anomaly_er: c.anomaly_er,
                            classifier_acc: c.classifier_acc,
                        }));
                        report.blackbox.push(BlackBoxOutcome {
                            defense: label.clone(),
                            seed,
                            status: "trained".into(),
                            benign_used: r.benign_used,
                            threshold: detector.threshold,
                            classifier_er: r.classifier_er,
                            anomaly_er: r.anomaly_er,
                            min_mean_score,
                        });
                    }
                    Err(Error::EmptyBenign { found }) => report.blackbox.push(BlackBoxOutcome {
                        defense: label.clone(),
                        seed,
                        status: "no_benign".into(),
                        benign_used: found,
                        threshold: detector.threshold,
                        classifier_er: 0.0,
                        anomaly_er: 0.0,
                        min_mean_score: 0.0,
                    }),
                    Err(e) => return Err(e),
                }
                report.timings.push(Timing {
                    phase: format!("blackbox {label} seed {seed}"),
                    seconds: t.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(report)
}
