//! The adversary: gradient-leakage reconstruction and evasion attacks.

pub mod extract;
pub mod invert;
pub mod reconstruct;

pub use extract::{extract_single, Extraction, LeakedUpdate};
pub use invert::{invert, invert_batch, invert_from, invert_labels, Inversion, InversionConfig, Metric};
pub use reconstruct::{reconstruct, write_reconstructions_csv, Method, ReconstructedRow, Reconstruction};
