//! Minimal tensor and reverse-mode autodiff toolkit.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod mat;
pub mod optim;
pub mod params;

pub use checkpoint::Checkpoint;
pub use graph::{Grads, Graph, Var};
pub use mat::{Mat, Real};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, Init, ParamSet};
