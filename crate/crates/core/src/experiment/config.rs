//! Experiment configuration files.
//!
//! Configs are TOML: top-level run settings plus `[dataset]`, `[fl]`,
//! `[[defenses]]`, `[privacy]`, `[evasion]` and `[full]` sections. Every
//! section has defaults, so a config only needs to state what differs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::InversionConfig;
use crate::data::{IngestOptions, PartitionMode, SynthConfig};
use crate::defense::DefenseKind;
use crate::error::{Error, Result};
use crate::evasion::{AttackConfig, AttackKind, BlackBoxConfig};
use crate::fl::FlConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussian class clusters.
    Synth {
        #[serde(flatten)]
        params: SynthConfig,
    },
    /// Synthetic rows shaped like the 41-feature, 23-class KDD99 table.
    Kdd99Like {
        #[serde(default = "default_kdd_rows")]
        rows: usize,
    },
    /// A labelled CSV file with a schema file beside it.
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default)]
        ingest: IngestOptions,
    },
}

fn default_kdd_rows() -> usize {
    6000
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synth {
            params: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One min/max for all clients, taken from the training split.
    #[default]
    Global,
    /// Each client rescales its shard with its own min/max.
    PerClient,
}

/// A defense to evaluate, with the local learning rate tuned for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseEntry {
    #[serde(flatten)]
    pub kind: DefenseKind,
    /// Overrides `fl.lr` while training under this defense.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Probe a freshly initialized model.
    #[default]
    Early,
    /// Probe a trained model loaded from a checkpoint.
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySpec {
    /// Single-row updates probed per (seed, defense); the model is never
    /// updated between probes.
    pub probes: usize,
    pub stage: Stage,
    pub checkpoint: Option<PathBuf>,
    pub inversion: InversionConfig,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        PrivacySpec {
            probes: 100,
            stage: Stage::Early,
            checkpoint: None,
            inversion: InversionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Benign-score quantile used as the threshold.
    pub quantile: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            epochs: 30,
            batch: 64,
            lr: 1e-2,
            quantile: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvasionSpec {
    /// Recovered rows wanted in each of the malicious and benign pools.
    pub pool: usize,
    /// Probe budget as a multiple of `pool`.
    pub max_probe_factor: usize,
    pub attacks: Vec<AttackKind>,
    /// Base settings; `kind` is ignored in favor of `attacks`.
    pub attack: AttackConfig,
    /// PGD budgets, in 1/255 units.
    pub pgd_sweep: Vec<f64>,
    /// CW distance weights.
    pub cw_sweep: Vec<f64>,
    pub detector: DetectorSpec,
    /// Black-box GAN pipeline; omitted to skip.
    pub blackbox: Option<BlackBoxConfig>,
    pub inversion: InversionConfig,
}

impl Default for EvasionSpec {
    fn default() -> Self {
        EvasionSpec {
            pool: 100,
            max_probe_factor: 4,
            attacks: AttackKind::ALL.to_vec(),
            attack: AttackConfig::default(),
            pgd_sweep: vec![10.0, 40.0, 80.0],
            cw_sweep: vec![1e-2, 1e-3, 1e-4],
            detector: DetectorSpec::default(),
            blackbox: Some(BlackBoxConfig::default()),
            inversion: InversionConfig::default(),
        }
    }
}

/// Paper-scale values applied by `--full`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullScale {
    pub rows: Option<usize>,
    pub rounds: Option<usize>,
    pub local_bs: Option<usize>,
    pub probes: Option<usize>,
    pub pool: Option<usize>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Fraction of generated rows used for training; CSV data uses
    /// `dataset.ingest.train_fraction` instead.
    pub train_fraction: f64,
    pub dataset: DatasetSpec,
    pub partition: PartitionMode,
    pub normalization: Normalization,
    pub fl: FlConfig,
    pub defenses: Vec<DefenseEntry>,
    pub privacy: PrivacySpec,
    pub evasion: EvasionSpec,
    pub full: FullScale,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seeds: vec![1],
            out_dir: None,
            train_fraction: 0.7,
            dataset: DatasetSpec::default(),
            partition: PartitionMode::Iid,
            normalization: Normalization::Global,
            fl: FlConfig::default(),
            defenses: vec![DefenseEntry {
                kind: DefenseKind::None,
                lr: None,
            }],
            privacy: PrivacySpec::default(),
            evasion: EvasionSpec::default(),
            full: FullScale::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map(|s| 1 + text[..s.start].matches('\n').count()).unwrap_or(0),
            msg: e.message().to_string(),
        })
    }

    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Csv { path, schema, .. } = &mut cfg.dataset {
            fix(path);
            fix(schema);
        }
        if let Some(c) = &mut cfg.privacy.checkpoint {
            fix(c);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("config serialization: {e}")))
    }

    /// Applies the `[full]` overrides.
    pub fn at_full_scale(mut self) -> Self {
        let f = self.full.clone();
        if let Some(r) = f.rows {
            match &mut self.dataset {
                DatasetSpec::Synth { params } => params.rows = r,
                DatasetSpec::Kdd99Like { rows } => *rows = r,
                DatasetSpec::Csv { ingest, .. } => ingest.cap = r,
            }
        }
        if let Some(r) = f.rounds {
            self.fl.rounds = r;
        }
        if let Some(b) = f.local_bs {
            self.fl.local_bs = b;
        }
        if let Some(p) = f.probes {
            self.privacy.probes = p;
        }
        if let Some(p) = f.pool {
            self.evasion.pool = p;
        }
        if let Some(s) = f.seeds {
            self.seeds = s;
        }
        self
    }

    pub fn fl_for(&self, entry: &DefenseEntry, seed: u64) -> FlConfig {
        FlConfig {
            lr: entry.lr.unwrap_or(self.fl.lr),
            seed,
            ..self.fl.clone()
        }
    }

    /// Every problem found, not just the first.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.name.trim().is_empty() {
            e.push("name must not be empty".into());
        }
        if self.seeds.is_empty() {
            e.push("seeds must list at least one seed".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            e.push(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        match &self.dataset {
            DatasetSpec::Synth { params } => {
                if params.rows == 0 || params.dim == 0 || params.n_classes < 2 {
                    e.push("dataset: synth needs rows >= 1, dim >= 1 and n_classes >= 2".into());
                }
            }
            DatasetSpec::Kdd99Like { rows } => {
                if *rows < 100 {
                    e.push(format!("dataset: kdd99_like needs at least 100 rows, got {rows}"));
                }
            }
            DatasetSpec::Csv { path, schema, .. } => {
                if !path.is_file() {
                    e.push(format!("dataset.path {} does not exist", path.display()));
                }
                if !schema.is_file() {
                    e.push(format!("dataset.schema {} does not exist", schema.display()));
                }
            }
        }
        e.extend(self.fl.validation_errors());
        if self.defenses.is_empty() {
            e.push("defenses must list at least one entry".into());
        }
        for (i, d) in self.defenses.iter().enumerate() {
            if let Err(Error::Config(msgs)) = d.kind.validate() {
                e.extend(msgs.into_iter().map(|m| format!("defenses[{i}]: {m}")));
            }
            if let Some(lr) = d.lr {
                if !(lr >= 0.0 && lr.is_finite()) {
                    e.push(format!("defenses[{i}].lr must be finite and >= 0, got {lr}"));
                }
            }
        }
        if self.privacy.probes == 0 {
            e.push("privacy.probes must be >= 1".into());
        }
        if let Err(Error::Config(msgs)) = self.privacy.inversion.validate() {
            e.extend(msgs.into_iter().map(|m| format!("privacy.inversion: {m}")));
        }
        if let Some(c) = &self.privacy.checkpoint {
            if self.privacy.stage == Stage::Late && !c.is_file() {
                e.push(format!("privacy.checkpoint {} does not exist", c.display()));
            }
        }
        let ev = &self.evasion;
        if ev.pool == 0 || ev.max_probe_factor == 0 {
            e.push("evasion.pool and evasion.max_probe_factor must be >= 1".into());
        }
        e.extend(
            ev.attack
                .validation_errors()
                .into_iter()
                .map(|m| format!("evasion.attack: {m}")),
        );
        if ev.pgd_sweep.iter().any(|v| !(*v >= 0.0)) {
            e.push("evasion.pgd_sweep entries must be >= 0".into());
        }
        if ev.cw_sweep.iter().any(|v| !(*v > 0.0)) {
            e.push("evasion.cw_sweep entries must be > 0".into());
        }
        if !(ev.detector.quantile > 0.0 && ev.detector.quantile <= 1.0) {
            e.push(format!(
                "evasion.detector.quantile must be in (0, 1], got {}",
                ev.detector.quantile
            ));
        }
        if ev.detector.epochs == 0 || ev.detector.batch == 0 {
            e.push("evasion.detector.epochs and batch must be >= 1".into());
        }
        if let Some(b) = &ev.blackbox {
            if b.samples == 0 || b.batch == 0 {
                e.push("evasion.blackbox.samples and batch must be >= 1".into());
            }
        }
        if let Err(Error::Config(msgs)) = ev.inversion.validate() {
            e.extend(msgs.into_iter().map(|m| format!("evasion.inversion: {m}")));
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
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse("name = \"x\"\nseeds = [7]\n", Path::new("x.toml")).unwrap();
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.fl, FlConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let text = r#"
name = "privacy-early"
seeds = [1, 2]

[dataset]
source = "kdd99_like"
rows = 3000

[fl]
rounds = 10
lr = 0.01

[[defenses]]
kind = "none"

[[defenses]]
kind = "feddef"
alpha = 0.5
lr = 0.015
transform_lr = 0.1

[[defenses]]
kind = "dp"
variance = 0.2

[privacy]
probes = 20

[evasion]
attacks = ["pgd", "cw"]
pgd_sweep = [10, 40]
"#;
        let c = ExperimentConfig::parse(text, Path::new("p.toml")).unwrap();
        assert_eq!(c.dataset, DatasetSpec::Kdd99Like { rows: 3000 });
        assert_eq!(c.defenses.len(), 3);
        assert_eq!(c.defenses[1].lr, Some(0.015));
        match &c.defenses[1].kind {
            DefenseKind::Feddef(f) => assert_eq!((f.alpha, f.lr), (0.5, 0.1)),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.evasion.attacks, vec![AttackKind::Pgd, AttackKind::Cw]);
        c.validate().unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap(), Path::new("p.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn all_errors_reported_together() {
        let text = "name = \"\"\nseeds = []\n[fl]\nclients = 0\n[privacy]\nprobes = 0\n";
        let c = ExperimentConfig::parse(text, Path::new("bad.toml")).unwrap();
        match c.validate() {
            Err(Error::Config(e)) => assert!(e.len() >= 4, "{e:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = "name = \"x\"\n\n[privacy]\nprobez = 3\n";
        match ExperimentConfig::parse(text, Path::new("t.toml")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_scale_overrides() {
        let text = "name = \"x\"\n[dataset]\nsource = \"kdd99_like\"\n[full]\nrows = 20000\nrounds = 300\n";
        let c = ExperimentConfig::parse(text, Path::new("t.toml"))
            .unwrap()
            .at_full_scale();
        assert_eq!(c.dataset, DatasetSpec::Kdd99Like { rows: 20000 });
        assert_eq!(c.fl.rounds, 300);
    }
}
