//! Minimal reverse-mode autodiff tailored to this crate's models.

pub mod conv;
pub mod graph;
pub mod norm;
pub mod ops;
pub mod resize;

pub use graph::{Grads, Graph, NodeId};
