//! Resistance identification from noisy voltage and current measurements.
//!
//! Batch estimators ([`batch`]), streaming estimators ([`recursive`]), the
//! measurement model ([`signals`]) and a Monte-Carlo harness ([`harness`]) that
//! scores them against the Cramér-Rao bound.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod output;
pub mod recursive;
pub mod signals;

pub use error::{Error, Result};
