//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation of a forward pass. Parameters enter
//! the graph by name from a [`ParamStore`](crate::params::ParamStore), and a
//! single [`Graph::backward`] sweep fills gradients for every differentiable
//! ancestor of a scalar loss. Each op checks its output for NaN/Inf and
//! reports it as an error instead of propagating it.

mod graph;
mod tensor;

pub use graph::{conv_out_len, Graph, Var};
pub use tensor::Tensor;
