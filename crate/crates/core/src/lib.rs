//! Optimal matching without replacement on a scalar score, the ATT matching
//! estimator, and the asymptotic bias that matching without replacement
//! leaves behind.
//!
//! - [`popgen`]: populations and sampling.
//! - [`matcher`]: exact, banded, with-replacement, capacitated and brute-force matchers.
//! - [`estimator`]: ATT estimators, control weights, caliper variant, overlap diagnostic.
//! - [`theory`]: `p*`, the score threshold `b`, asymptotic bias, Wasserstein-1 on the line.
//! - [`simlab`]: Monte Carlo replication of the estimator's bias and spread.
//! - [`cli`]: the `matchbias` command-line front end.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod matcher;
pub mod popgen;
pub mod quad;
pub mod simlab;
pub mod theory;

pub use error::{Error, Result};
