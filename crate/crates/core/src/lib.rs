//! Pool-based active learning with a joint cross-entropy + Barlow Twins
//! objective and Weibull extreme-value sampling.

pub mod active;
pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod trainer;
pub mod weibull;

pub use error::{Error, Result};
