//! Hierarchical Beta-Binomial modelling of airline delay attribution.
//!
//! The pipeline runs ingest → cluster → model design → NUTS sampling →
//! diagnostics → reporting. [`simulate`] produces synthetic panels with known
//! parameters for recovery checks.

pub mod calendar;
pub mod cluster;
pub mod diagnostics;
pub mod ingest;
pub mod model;
pub mod report;
pub mod sampler;
pub mod simulate;
pub mod special;
