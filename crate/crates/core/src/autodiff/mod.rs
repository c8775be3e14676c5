//! Reverse-mode differentiation over a recorded operation graph.
//!
//! Every backward rule is written in terms of recorded operations, so a
//! gradient computed with `create_graph = true` is itself part of the graph
//! and can be differentiated again (reverse-over-reverse). This is what the
//! gradient penalties need: they are functions of an input gradient that must
//! be differentiated with respect to critic parameters.

mod check;
mod graph;
pub mod kernels;
mod tensor;

pub use check::{finite_diff_check, relative_error};
pub use graph::{Graph, Var};
pub use kernels::LinearMap;
pub use tensor::Tensor;
