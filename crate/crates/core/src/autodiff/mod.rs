//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of every bound parameter. The operation set is the
//! one the detector heads and the cost-sensitive losses need: dense layers,
//! `tanh`/`sigmoid`, row/element selection, max reduction, clamped weighted
//! binary cross entropy and smooth-L1.

mod graph;
mod params;
mod tensor;

pub(crate) use graph::sigmoid;
pub use graph::{Gradients, Graph, Value, PROB_EPS};
pub use params::ParamStore;
pub use tensor::Tensor;
