//! Synthetic multi-domain driving world: scripted scenes, rendering and
//! dataset I/O.

pub mod dataset;
pub mod domain;
pub mod render;
pub mod sim;

pub use dataset::{extract_samples, Dataset, Sample, ScenarioConfig, Split, Waypoint};
pub use domain::{make_domain_specs, DomainSpec, DomainStyle, K_MAX};
pub use sim::{simulate_episode, Behavior, EgoState, Episode, Frame, Scene, SimParams};
