//! Dense matrices and a small reverse-mode autodiff tape.

mod graph;
mod mat;
mod params;

pub mod gradcheck;

pub use graph::{gelu, sigmoid, softplus, Gradients, Graph, Unary, Var};
pub use mat::Mat;
pub use params::{ParamId, ParamStore};
