//! Travel-time prediction over corridor time-space matrices.
//!
//! The crate covers the whole path from raw toll-detector reads to evaluated
//! predictions:
//!
//! * [`traffic`] turns detection events into trips and per-interval travel
//!   times, and hosts the basic traffic-flow formulas.
//! * [`grid`] assembles interval records into a segments × intervals matrix
//!   and cuts it into supervised windows.
//! * [`baselines`] holds the comparison predictors (historical average,
//!   linear and logistic regression, a small fully-connected network).
//! * [`cnn`] holds the 3×3 closed-form convolutional predictor with its exact
//!   update rules, and the general convolutional network.
//! * [`synth`] simulates corridor traffic with upstream-moving congestion.
//! * [`harness`] runs experiments, computes MAPE and renders reports.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cnn;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod harness;
pub mod io;
pub mod math;
pub mod model;
pub mod optim;
pub mod synth;
pub mod traffic;

pub use error::{Error, Result};
