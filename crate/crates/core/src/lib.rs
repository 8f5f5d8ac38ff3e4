//! Claims processing backlogs under a shared capacity constraint.
//!
//! The crate covers the whole pipeline: reporting counts from a gamma-Poisson
//! model ([`stochastics`]), the aggregate Lindley backlog and its stationary
//! theory ([`queueing`]), the labeled backlog-first capacity sharing procedure
//! ([`processing`]), Monte Carlo estimation of the `g`/`h` expectation
//! sequences ([`estimation`]), a recurrent sequence approximator for them
//! ([`approximator`]), the closed-form backlog expectations assembled from those
//! sequences ([`expectations`]) and the capacity cost curves and their
//! minimizers ([`costing`]).

pub mod approximator;
pub mod costing;
pub mod error;
pub mod estimation;
pub mod expectations;
pub mod parallel;
pub mod processing;
pub mod queueing;
pub mod report;
pub mod stats;
pub mod stochastics;
pub mod validation;

pub use error::{Error, Result};
pub use stochastics::{ModelConfig, RngState};
