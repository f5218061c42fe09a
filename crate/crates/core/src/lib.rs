//! Functional variational inference with structured Gaussian-process priors.
//!
//! The crate trains a variational multi-output GP (mean plus rank-L +
//! diagonal covariance, both produced by a small network) against a GP prior
//! equivalent to a pooling-free Bayesian CNN, using a function-space ELBO.
//! Covariance matrices over a batch have diagonal P×P blocks, so inversion,
//! log-determinants, Cholesky factors and KL divergences all run on length-P
//! vectors ([`block_cov`]). Likelihoods are built from loss functions via
//! Gibbs normalization ([`likelihood`]), and predictions return epistemic and
//! aleatoric uncertainty from a single forward pass ([`fvi`]).

pub mod block_cov;
pub mod check;
pub mod cnngp;
pub mod error;
pub mod fvi;
pub mod gradnet;
pub mod likelihood;
pub mod metrics;
pub mod quad;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod toytasks;
pub mod varfam;

pub use error::{FvError, Result};
