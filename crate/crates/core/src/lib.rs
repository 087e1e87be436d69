//! Federated intrusion-detection laboratory: FedAvg training, gradient
//! leakage attacks, the FedDef input-perturbation defense with baseline
//! defenses, evasion attacks, and privacy metrics.

pub mod attack;
pub mod autodiff;
pub mod data;
pub mod defense;
pub mod error;
pub mod evasion;
pub mod experiment;
pub mod fl;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
