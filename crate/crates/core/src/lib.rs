//! Action costs on metric-like spaces.
//!
//! An action cost `a(tau, u, v)` is the price of moving from `u` to `v` in
//! time `tau`. This crate provides the cost axioms and a checker for them,
//! constructors that preserve the axioms, the induced metrics `d_lambda`,
//! the action and action density of curves, minimizing-movement time
//! stepping, transcribed action integrals, and dyadic geodesics.
//!
//! ```
//! use actionspace::{cost_constructors::{from_metric, ConvexGauge}, Metric, Point};
//!
//! let a = from_metric(Metric::euclidean(2.0)?, ConvexGauge::power(2.0)?)?;
//! assert_eq!(a.evaluate(0.5, &Point::scalar(0.0), &Point::scalar(1.0))?, 2.0);
//! # Ok::<(), actionspace::Error>(())
//! ```

// Comparisons are written as `!(x > 0.0)` so that NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action_core;
pub mod cost_constructors;
pub mod curves;
pub mod error;
pub mod induced_metric;
pub mod mm_solver;
pub mod schema;
pub mod state_space;
pub mod trajectory_opt;

pub use action_core::{ActionCost, Claims, Growth, LimitSchedule};
pub use error::{Error, Result};
pub use state_space::{Metric, Point};
