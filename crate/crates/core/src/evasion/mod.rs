//! Evasion attacks run with reconstructed traffic.
//!
//! White-box attacks perturb recovered malicious rows so that the NIDS
//! classifier calls them benign or the anomaly detector scores them under
//! its threshold. The black-box pipeline instead trains a GAN on recovered
//! benign rows and measures how well its samples pass the same detectors.

pub mod blackbox;
pub mod report;
pub mod whitebox;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AnomalyAutoencoder, MlpClassifier};

pub use blackbox::{benign_rows, blackbox_gan, BlackBoxConfig, BlackBoxReport};
pub use report::{
    write_evasion_csv, write_evasion_jsonl, CellTags, EvasionReport, EvasionSummary, SampleRecord, EVASION_CSV_HEADER,
};
pub use whitebox::{
    attack_rows, autopgd, autopgd_objective, autopgd_traced, cw, deepfool, deepfool_traced, evades, fgsm, objective,
    pgd, AutoPgdTrace, DeepFoolTrace, APGD_CHECKPOINTS, DEEPFOOL_OVERSHOOT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Cw,
    Deepfool,
    Autopgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Cw,
        AttackKind::Deepfool,
        AttackKind::Autopgd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Cw => "cw",
            AttackKind::Deepfool => "deepfool",
            AttackKind::Autopgd => "autopgd",
        }
    }

    /// Whether the attack can run against a score-only anomaly detector.
    pub fn supports_anomaly(self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Cw)
    }
}

/// Attack hyper-parameters. Budgets are given in 1/255 units of the
/// normalized feature range, as is customary for image attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget, in 1/255 units.
    pub epsilon_255: f64,
    /// Signed step size, in 1/255 units.
    pub alpha_255: f64,
    pub steps: usize,
    /// CW weight on the squared L2 distance.
    pub c: f64,
    /// Adam learning rate for CW's change of variables.
    pub cw_lr: f64,
    /// Class the classifier attacks aim for.
    pub target: usize,
    /// PGD starts from a uniform point in the budget ball when set.
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            epsilon_255: 40.0,
            alpha_255: 6.0,
            steps: 100,
            c: 0.01,
            cw_lr: 0.01,
            target: 0,
            random_start: true,
        }
    }
}

impl AttackConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon_255 / 255.0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_255 / 255.0
    }

    pub fn validation_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.epsilon_255 >= 0.0 && self.epsilon_255.is_finite()) {
            e.push(format!("epsilon_255 must be finite and >= 0, got {}", self.epsilon_255));
        }
        if !(self.alpha_255 >= 0.0 && self.alpha_255.is_finite()) {
            e.push(format!("alpha_255 must be finite and >= 0, got {}", self.alpha_255));
        }
        if self.steps == 0 {
            e.push("steps must be >= 1".into());
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            e.push(format!("c must be finite and > 0, got {}", self.c));
        }
        if !(self.cw_lr > 0.0 && self.cw_lr.is_finite()) {
            e.push(format!("cw_lr must be finite and > 0, got {}", self.cw_lr));
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

/// The model under attack.
#[derive(Debug, Clone, Copy)]
pub enum Victim<'a> {
    Classifier(&'a MlpClassifier),
    Anomaly(&'a AnomalyAutoencoder),
}

impl Victim<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Victim::Classifier(m) => m.dim(),
            Victim::Anomaly(a) => a.dim(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Victim::Classifier(_) => "classifier",
            Victim::Anomaly(_) => "anomaly",
        }
    }
}
