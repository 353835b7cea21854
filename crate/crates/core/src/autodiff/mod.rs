//! Reverse-mode differentiation over dense tensors.
//!
//! Graphs are built once and evaluated many times against different
//! [`Bindings`]. Because [`Graph::gradient`] emits the backward pass as
//! ordinary nodes, differentiating a gradient gives second-order terms,
//! which is what the distillation meta-gradient needs.
//!
//! Supported ops: matmul (with transpose flags), add/sub, elementwise
//! multiply, constant and scalar-node scaling, relu, tanh, row softmax,
//! softmax cross-entropy with integer labels, sum and mean reductions,
//! row/column broadcast and their adjoint reductions, reshape, and 2-D mean
//! pooling. The relu derivative at exactly 0 is 0.

mod graph;
mod gradcheck;
mod kernels;

pub use gradcheck::{finite_diff, max_relative_error, FiniteDiffError};
pub use graph::{Bindings, Graph, NodeId};
pub(crate) use kernels::softmax_rows;

#[cfg(test)]
mod tests;
