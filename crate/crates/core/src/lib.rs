#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Bayesian non-negative decision layer.
//!
//! A drop-in stochastic replacement for a softmax classification head over
//! precomputed features: gamma priors, Weibull variational posteriors,
//! sum-normalized non-negative factorization of the class scores, and the
//! tooling around it (training, uncertainty, sparsity and identifiability
//! experiments).

pub mod cli_io;
pub mod data;
pub mod distributions;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod rng;
pub mod synthlab;
pub mod training;
pub mod uncertainty;

pub use error::{BndlError, Result};
