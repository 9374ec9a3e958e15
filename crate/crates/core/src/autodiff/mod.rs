//! Small reverse-mode differentiation layer.
//!
//! A [`Graph`] records tensor operations as they are evaluated; calling
//! [`Graph::backward`] on a scalar node propagates gradients to every
//! recorded value. Only the operations the localization model needs are
//! provided.

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, grad_check_graph};
pub use graph::{argmax_first, Axis, Gradients, Graph, NodeId, PROB_FLOOR};
pub use tensor::{ordered_sum, Tensor};
