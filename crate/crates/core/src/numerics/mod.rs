//! Reverse-mode differentiable-computation substrate.
//!
//! A [`graph::Graph`] is a define-by-run tape of dense row-major tensors.
//! Forward methods append nodes and return [`graph::ValueId`] handles;
//! [`graph::Graph::backward`] walks the tape in reverse and accumulates
//! analytic gradients. [`check::grad_check`] is the independent
//! finite-difference oracle for every primitive and for composite graphs.
//!
//! A graph and its values are confined to one thread of control for the
//! duration of a forward/backward pass; distinct graphs may run in parallel.

pub mod check;
pub mod graph;
pub mod lstm;
pub mod params;
pub mod scalar;
pub mod tensor;
