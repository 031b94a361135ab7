//! Dense tensors with tape-based reverse-mode differentiation.

pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, MacCounts, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, Param, ParamGroup, ParamStore};
pub use tensor::{Element, Tensor};

/// Precision used for training.
pub type Real = f32;
