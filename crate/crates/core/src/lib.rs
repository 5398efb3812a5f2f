//! Monte Carlo engine and estimation library for census-anchored
//! convenience surveys of vaccination coverage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bisect;
pub mod cli;
pub mod dgm;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod population;
pub mod report;
pub mod rng;
pub mod validate;

pub use error::{Error, EstimationFailure, Result};
