//! FedAvg simulation with a per-client defense hook.

mod aggregate;
mod client;
mod server;

pub use aggregate::aggregate;
pub(crate) use client::defended_gradient;
pub use client::{local_update, sample_batch, LocalOptimizer, LocalUpdate};
pub use server::{sample_clients, train, write_rounds_csv, FlConfig, RoundRecord, TrainOutcome};

/// Tags for deriving independent random streams from one seed.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const CLIENT: u64 = 3;
}
