//! Nonlinear filtering and simulation-based parameter estimation for a
//! stochastic one-compartment pharmacokinetic model.
//!
//! - [`model`]: parameters, sampling grid and Euler–Maruyama simulation.
//! - [`ekf`]: scalar extended Kalman filter.
//! - [`dmf`]: density-based Monte Carlo filter (weighted particle paths,
//!   no resampling).
//! - [`loss`]: the replicate-simulation absolute-deviation loss.
//! - [`ga`]: the genetic algorithm used to minimize that loss.
//! - [`harness`]: replicated comparison and estimation studies.

// `!(x > 0.0)` is used on purpose throughout so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dmf;
pub mod ekf;
pub mod error;
pub mod ga;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use model::{PkParams, TimeGrid, Trajectory};
