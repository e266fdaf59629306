//! Monte Carlo toolkit for rank-based Brownian particle systems.

pub mod config;
pub mod coupling;
pub mod drift;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod local_time;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod stats;

pub use drift::{Admissibility, DriftSpec, StationaryRates};
pub use error::{Error, Result};
pub use sampler::{Marginal, ProductLaw};
