//! Exact and limiting priors and posteriors for deep linear Bayesian networks.
//!
//! The prior over network outputs is a Gaussian scale mixture whose mixing
//! matrix is a product of Bartlett factors at finite width, and a functional
//! of Brownian paths in the joint depth/width limit. Posteriors under a
//! Gaussian likelihood are mixtures of Gaussians over the same mixing law.

// `!(x > 0.0)` is used throughout so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod limit;
pub mod linalg;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod suite;

pub use error::{Error, Result};
