//! Minimal reverse-mode autodiff over `f64` ndarrays, plus the layer,
//! initializer, and optimizer pieces the networks in this crate share.
//!
//! Graphs are built per sample: parameters enter as leaf nodes bound from
//! a [`ParamStore`], a scalar loss comes out, and [`Graph::backward`]
//! fills gradients. Batches average per-sample gradients in index order,
//! which keeps training bitwise deterministic regardless of how samples
//! are scheduled.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Binding, Conv2d, InstanceNorm, LayerNorm, Linear, ParamId, ParamStore};
pub use optim::{cosine_lr, Adam};
