//! Clustering of spatially correlated functional data.
//!
//! Regions carry curves (scaled epidemic growth rates); clusters share a
//! basis-expanded mean curve and a residual variance, residuals are coupled
//! across neighbouring regions by a conditional autoregressive (CAR) model,
//! and the partition follows a geographically weighted Chinese restaurant
//! process. Posterior inference is by Gibbs sampling with a Metropolis step
//! for the CAR coupling.

pub mod cli;
pub mod config;
pub mod curves;
pub mod error;
pub mod inference;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod simgen;
pub mod spatial;

pub use error::{Error, Result};
