//! Experiment reports and their on-disk form.
//!
//! A run directory holds one CSV per metric family, `summary.json`, the
//! per-sample evasion records as JSON lines, and model checkpoints. All of
//! these are byte-identical across repeated runs with the same config and
//! seeds. Wall-clock timings go to `timings.csv`, which is the one file
//! that is expected to differ.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evasion::{write_evasion_jsonl, EvasionReport, EvasionSummary, EVASION_CSV_HEADER};
use crate::nn::checkpoint;
use crate::nn::MlpClassifier;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Train,
    Privacy,
    Evasion,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Train => "train",
            RunKind::Privacy => "privacy",
            RunKind::Evasion => "evasion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub defense: String,
    pub seed: u64,
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub defense: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRow {
    pub defense: String,
    pub seed: u64,
    pub probe: usize,
    pub row: usize,
    /// `extraction`, `inversion` or `failed`.
    pub method: String,
    pub score: Option<f64>,
    pub true_label: usize,
    pub recovered_label: Option<usize>,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub defense: String,
    pub seed: u64,
    pub probes: usize,
    pub failed: usize,
    pub extracted: usize,
    pub mean_score: f64,
    pub label_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Row {
    pub defense: String,
    pub seed: u64,
    pub probe: usize,
    pub lower_bound: f64,
    pub input_distance: f64,
    pub m: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvasionCell {
    pub seed: u64,
    pub report: EvasionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub defense: String,
    pub seed: u64,
    pub probes: usize,
    pub malicious: usize,
    pub benign: usize,
    /// Mean privacy score of the pooled reconstructions.
    pub mean_score: f64,
    pub label_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub defense: String,
    pub seed: u64,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub mean_score: f64,
    pub anomaly_er: f64,
    pub classifier_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxOutcome {
    pub defense: String,
    pub seed: u64,
    /// `trained`, or `no_benign` when too few benign rows were recovered.
    pub status: String,
    pub benign_used: usize,
    pub threshold: f64,
    pub classifier_er: f64,
    pub anomaly_er: f64,
    /// Lowest per-epoch mean anomaly score seen.
    pub min_mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

/// A trained model kept for checkpoint export.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub defense: String,
    pub seed: u64,
    pub model: MlpClassifier,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: RunKind,
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRow>,
    pub accuracy: Vec<AccuracySummary>,
    pub privacy: Vec<PrivacyRow>,
    pub privacy_summary: Vec<PrivacySummary>,
    pub theorem3: Vec<Theorem3Row>,
    pub pools: Vec<PoolSummary>,
    pub evasion: Vec<EvasionCell>,
    pub curves: Vec<CurveRow>,
    pub blackbox: Vec<BlackBoxOutcome>,
    pub checks: Vec<Check>,
    pub timings: Vec<Timing>,
    pub models: Vec<SavedModel>,
}

/// The JSON summary: everything except per-row tables, samples, models
/// and timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub kind: RunKind,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub accuracy: Vec<AccuracySummary>,
    pub privacy: Vec<PrivacySummary>,
    pub pools: Vec<PoolSummary>,
    pub evasion: Vec<(u64, EvasionSummary)>,
    pub blackbox: Vec<BlackBoxOutcome>,
    pub checks: Vec<Check>,
    pub all_checks_passed: bool,
}

impl ExperimentReport {
    pub fn new(kind: RunKind, config: ExperimentConfig) -> Self {
        ExperimentReport {
            kind,
            config,
            rounds: Vec::new(),
            accuracy: Vec::new(),
            privacy: Vec::new(),
            privacy_summary: Vec::new(),
            theorem3: Vec::new(),
            pools: Vec::new(),
            evasion: Vec::new(),
            curves: Vec::new(),
            blackbox: Vec::new(),
            checks: Vec::new(),
            timings: Vec::new(),
            models: Vec::new(),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            name: self.config.name.clone(),
            kind: self.kind,
            code_version: CODE_VERSION.into(),
            config: self.config.clone(),
            accuracy: self.accuracy.clone(),
            privacy: self.privacy_summary.clone(),
            pools: self.pools.clone(),
            evasion: self
                .evasion
                .iter()
                .map(|c| (c.seed, c.report.summary.clone()))
                .collect(),
            blackbox: self.blackbox.clone(),
            checks: self.checks.clone(),
            all_checks_passed: self.all_checks_passed(),
        }
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sanitized defense label usable in a file name.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Writes every deterministic artifact into `dir`, creating it if needed,
/// and returns the files written in order.
pub fn export(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    write_csv(
        &out("rounds.csv"),
        &["defense", "seed", "round", "accuracy", "loss", "lr"],
        report.rounds.iter().map(|r| {
            vec![
                r.defense.clone(),
                r.seed.to_string(),
                r.round.to_string(),
                num(r.accuracy),
                num(r.loss),
                num(r.lr),
            ]
        }),
    )?;
    write_csv(
        &out("accuracy.csv"),
        &["defense", "runs", "mean", "sd"],
        report
            .accuracy
            .iter()
            .map(|a| vec![a.defense.clone(), a.runs.to_string(), num(a.mean), num(a.sd)]),
    )?;
    write_csv(
        &out("privacy.csv"),
        &[
            "defense",
            "seed",
            "probe",
            "row",
            "method",
            "score",
            "true_label",
            "recovered_label",
            "objective",
        ],
        report.privacy.iter().map(|r| {
            vec![
                r.defense.clone(),
                r.seed.to_string(),
                r.probe.to_string(),
                r.row.to_string(),
                r.method.clone(),
                opt(&r.score),
                r.true_label.to_string(),
                opt(&r.recovered_label),
                opt(&r.objective),
            ]
        }),
    )?;
    write_csv(
        &out("privacy_summary.csv"),
        &[
            "defense",
            "seed",
            "probes",
            "failed",
            "extracted",
            "mean_score",
            "label_accuracy",
        ],
        report.privacy_summary.iter().map(|s| {
            vec![
                s.defense.clone(),
                s.seed.to_string(),
                s.probes.to_string(),
                s.failed.to_string(),
                s.extracted.to_string(),
                num(s.mean_score),
                num(s.label_accuracy),
            ]
        }),
    )?;
    write_csv(
        &out("theorem3.csv"),
        &[
            "defense",
            "seed",
            "probe",
            "lower_bound",
            "input_distance",
            "m",
            "holds",
        ],
        report.theorem3.iter().map(|t| {
            vec![
                t.defense.clone(),
                t.seed.to_string(),
                t.probe.to_string(),
                num(t.lower_bound),
                num(t.input_distance),
                num(t.m),
                t.holds.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out("pools.csv"),
        &[
            "defense",
            "seed",
            "probes",
            "malicious",
            "benign",
            "mean_score",
            "label_accuracy",
        ],
        report.pools.iter().map(|p| {
            vec![
                p.defense.clone(),
                p.seed.to_string(),
                p.probes.to_string(),
                p.malicious.to_string(),
                p.benign.to_string(),
                num(p.mean_score),
                num(p.label_accuracy),
            ]
        }),
    )?;
    let mut header = vec!["seed"];
    header.extend(EVASION_CSV_HEADER);
    write_csv(
        &out("evasion.csv"),
        &header,
        report.evasion.iter().map(|c| {
            let s = &c.report.summary;
            vec![
                c.seed.to_string(),
                s.defense.clone(),
                s.victim.clone(),
                s.attack.clone(),
                s.budget_name.clone(),
                num(s.budget),
                s.n.to_string(),
                s.evaded.to_string(),
                num(s.evasion_rate),
                opt(&s.acc_dnn),
                opt(&s.mean_score),
                num(s.mean_l2),
                num(s.mean_linf),
            ]
        }),
    )?;
    let reports: Vec<EvasionReport> = report.evasion.iter().map(|c| c.report.clone()).collect();
    write_evasion_jsonl(&out("evasion_samples.jsonl"), &reports)?;
    write_csv(
        &out("blackbox_curves.csv"),
        &[
            "defense",
            "seed",
            "epoch",
            "d_loss",
            "g_loss",
            "mean_score",
            "anomaly_er",
            "classifier_acc",
        ],
        report.curves.iter().map(|c| {
            vec![
                c.defense.clone(),
                c.seed.to_string(),
                c.epoch.to_string(),
                num(c.d_loss),
                num(c.g_loss),
                num(c.mean_score),
                num(c.anomaly_er),
                num(c.classifier_acc),
            ]
        }),
    )?;
    write_csv(
        &out("blackbox.csv"),
        &[
            "defense",
            "seed",
            "status",
            "benign_used",
            "threshold",
            "classifier_er",
            "anomaly_er",
            "min_mean_score",
        ],
        report.blackbox.iter().map(|b| {
            vec![
                b.defense.clone(),
                b.seed.to_string(),
                b.status.clone(),
                b.benign_used.to_string(),
                num(b.threshold),
                num(b.classifier_er),
                num(b.anomaly_er),
                num(b.min_mean_score),
            ]
        }),
    )?;
    write_csv(
        &out("checks.csv"),
        &["name", "passed", "detail"],
        report
            .checks
            .iter()
            .map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]),
    )?;
    let json = serde_json::to_string_pretty(&report.summary())? + "\n";
    let p = out("summary.json");
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    for m in &report.models {
        let p = out(&format!("model-{}-seed{}.ckpt", slug(&m.defense), m.seed));
        checkpoint::save(&p, &m.model.net, "classifier", m.seed, None)?;
    }
    write_csv(
        &dir.join("timings.csv"),
        &["phase", "seconds"],
        report.timings.iter().map(|t| vec![t.phase.clone(), num(t.seconds)]),
    )?;
    Ok(written)
}
