//! Minimal dense-array engine with reverse-mode automatic differentiation.
//!
//! The operator set is deliberately closed: exactly the operations the CSI
//! encoder and its training objectives require. Every operation records a
//! backward closure on a [`Graph`] tape; [`Graph::backward`] replays the
//! tape in reverse execution order.

mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use gradcheck::{grad_check, grad_check_multi};
pub use graph::Graph;
pub use tensor::Tensor;
