pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod priors;
pub mod rng;
pub mod scenario;
pub mod train;
pub mod world_model;

pub use error::{Error, Result};
