//! Deterministic simulator for federated averaging with category-coverage
//! client selection.
//!
//! Clients publish a bitmask of the label categories they hold. The server
//! picks participants either uniformly at random or by covering categories,
//! trains a small MLP on each selected client, and averages the updates
//! weighted by local sample counts.

pub mod config;
pub mod datasets;
pub mod distributions;
pub mod error;
pub mod federation;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod selection;

pub use error::{Error, Result};
pub use mask::CategoryMask;
