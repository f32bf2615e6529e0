//! Simulation of log-correlated Gaussian fields, their multiplicative chaos
//! measures and the inverse homeomorphisms of those measures.

pub mod dilatation;
pub mod error;
pub mod estimate;
pub mod gmc;
pub mod graph;
pub mod grid;
pub mod inverse;
pub mod kernel;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod table;

pub use error::{GmcError, Result};
pub use grid::Grid;
pub use kernel::{KernelFamily, KernelSpec};
