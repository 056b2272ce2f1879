//! Core statistics for measuring adaptive partial pooling on a two-level
//! artificial language.
//!
//! - [`langgen`]: the language and its data-generating process
//! - [`shrinkage`]: closed-form precision-weighted pooling
//! - [`hierfit`]: hierarchical Bayesian logistic regression (random-walk Metropolis)
//! - [`betareg`]: maximum-likelihood beta regression with a logit link
//! - [`analysis`]: regression designs, pooling trajectories and metrics

pub mod analysis;
pub mod betareg;
pub mod diagnostics;
pub mod error;
pub mod hierfit;
pub mod langgen;
pub mod rng;
pub mod shrinkage;
pub mod special;

pub use error::{Error, Result};
