//! Causal comparison of methods across a population of ML processing systems.
//!
//! A population is a set of pipeline variables (the contrast under study plus
//! nuisance variables) and a data pool. The harness samples processing
//! systems from it, runs each under treatment and control, and estimates the
//! expected generalization error of each arm and the average treatment
//! effect, with system-level resampling tests. Small populations can be
//! evaluated exactly by enumeration.

pub mod error;
pub mod estimation;
pub mod execution;
mod fmt17;
pub mod harness;
pub mod inference;
pub mod numeric;
pub mod oracle;
pub mod population;
pub mod sampling;
pub mod seed;

pub use error::{Error, Result};
