//! Evaluation of A/B tests whose treatment only acts on *trigger*
//! observations, the observations where treatment and control behave
//! differently.
//!
//! Each unit i has a trigger intensity r_i, the fraction of its observations
//! that trigger. Three estimators of the average treatment effect are
//! provided:
//!
//! - the baseline difference in means, which ignores r;
//! - full knowledge, an OLS fit of `y = b0 + b1 r + b2 T r` with exact r;
//! - partial knowledge, the same fit with r estimated from m sampled
//!   observations per unit.
//!
//! Alongside the estimators the crate has a synthetic data generator, sampling
//! error bounds, a Monte Carlo sweep harness, cross-method comparison
//! statistics and a CLI (`trigeval`).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod sampling;
pub mod seed;
pub mod sim;

pub use cli::run_cli;
pub use error::{Error, Result};
pub use estimators::{fit, FitResult, Method};
pub use model::{Assignment, Dataset, GenConfig, ModelParams, ObservationRecord, UnitRecord};
