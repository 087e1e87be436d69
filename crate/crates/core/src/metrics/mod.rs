//! Privacy score, label accuracy, and evaluators for the convergence and
//! privacy lower bounds.

mod bounds;
mod privacy;

pub use bounds::{convergence_bound, theorem3_check, ConvergenceBoundInputs, Theorem3Inputs, Theorem3Outcome};
pub use privacy::{label_accuracy, privacy_score};
