//! Minimal tape-based reverse-mode differentiation over rank-2 `f64` tensors.

mod check;
mod graph;
mod tensor;

pub use check::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
