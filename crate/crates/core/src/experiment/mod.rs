//! Batch experiments: configuration, runners and report export.

pub mod config;
pub mod report;
pub mod run;

pub use config::{
    DatasetSpec, DefenseEntry, DetectorSpec, EvasionSpec, ExperimentConfig, FullScale, Normalization, PrivacySpec,
    Stage,
};
pub use report::{export, ExperimentReport, RunKind, Summary, CODE_VERSION};
pub use run::{prepare, run_evasion, run_privacy, run_train};
