//! Minimal reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)s.

pub mod checkpoint;
mod graph;
mod kernels;
mod params;

pub use graph::{Axis, Graph, Padding, Var, PROB_FLOOR};
pub use params::{Gradients, ParamId, ParamStore};

#[cfg(test)]
mod tests;
