//! Exact posterior inference for coupling optional Pólya tree priors.

pub mod baselines;
pub mod coopt;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod opt;
pub mod oracle;
pub mod space;
pub mod trees;

pub use error::{Error, Result};
