//! Biased random walks on Galton–Watson trees: samplers, exact recursions and
//! Monte Carlo estimators for velocity, diffusivity and escape probabilities.

pub mod environment;
pub mod error;
pub mod montecarlo;
pub mod offspring;
pub mod recursion;
pub mod spine;
pub mod tree;
pub mod walk;

pub use error::{Error, Result};
pub use montecarlo::{EstimateCI, MomentAccumulator, Replication, RngStream};
pub use offspring::{ModelConstants, OffspringDist, OffspringSampler};
