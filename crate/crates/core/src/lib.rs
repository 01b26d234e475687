//! Splitting-based distributed selection of the best Q of n contending
//! nodes.
//!
//! A time-slotted population of nodes, each knowing only its own suitability
//! metric, contends for selection: per slot, exactly the nodes whose metric
//! falls in the current threshold window transmit, and a sink feeds back
//! idle / success / collision. Splitting the window in half after each
//! collision finds the best node in under 2.5 slots on average - for any
//! population size - and the generalized sweep selects the best Q nodes at
//! roughly two slots apiece.
//!
//! The crate provides:
//!
//! * [`protocol`] - the executable single- and Q-selection state machines;
//! * [`analysis`] - exact finite-n and asymptotic average-slot expressions,
//!   bounds, and the post-collision expectation tables;
//! * [`metrics`] - metric models, normalization, and proportional expansion
//!   for discrete metrics;
//! * [`montecarlo`] - a reproducible trial engine to validate the analysis;
//! * [`optimize`] - optimal contention-load search and the per-Q comparison
//!   table.

// Validation guards are written `!(x > 0.0)` so NaN inputs are rejected
// along with non-positive ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod montecarlo;
pub mod optimize;
pub mod protocol;

pub use error::{Error, Result};
