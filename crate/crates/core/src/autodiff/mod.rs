//! Reverse-mode differentiation with support for gradients of gradients.

mod adam;
mod graph;

pub use adam::AdamState;
pub use graph::{sigmoid, Graph, NodeId};
