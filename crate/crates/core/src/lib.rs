//! Latency staircase analysis and performance-aware channel pruning for
//! convolution layers on embedded GPUs.
//!
//! The crate is organised as a pipeline:
//!
//! * [`model`]: layer geometry, built-in network tables, latency samples and curves
//! * [`pruning`]: channel removal as a shape transform and pruning sweeps
//! * [`dispatch`]: analytical model of GEMM/direct/TVM kernel dispatch and synthetic latency
//! * [`staircase`]: plateaus, optimal points, speedup maps, slowdown regions, regimes
//! * [`advisor`]: Pareto front and pruning recommendations
//! * [`io`], [`profile`], [`report`], [`pipeline`]: file formats and the end-to-end stages

pub mod advisor;
pub mod dispatch;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod profile;
pub mod pruning;
pub mod report;
pub mod staircase;

pub use error::{Error, Result};
