//! Reverse-mode autodiff over dense tensors and the source-inversion network.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod real;

pub use graph::{Grads, Graph, GraphError, NodeId, ParamStore, Tensor};
pub use model::{forward, init_params, predict, Batch, Forward, Mode, ModelConfig, ModelError, Variant};
