//! Topographic variational autoencoders with learned equivariant capsules.

pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod topography;
pub mod vi;

pub use error::{Error, Result};
pub use exec::Exec;
