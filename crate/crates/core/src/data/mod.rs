//! Tabular data: schema, normalization, ingestion, partitioning and
//! synthetic generators.

pub mod dataset;
pub mod ingest;
pub mod partition;
pub mod schema;
pub mod synth;

pub use dataset::{one_hot, Dataset};
pub use ingest::{ingest_csv, IngestOptions, Ingested};
pub use partition::{partition, PartitionMode, PartitionPlan};
pub use schema::{canonicalize, project_to_original, Feature, FeatureKind, FeatureSchema};
pub use synth::{kdd99_like, synth_dataset, SynthConfig};
