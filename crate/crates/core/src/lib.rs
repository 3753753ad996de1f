//! Variational PAC-Bayesian 1-bit matrix completion.
//!
//! Two solvers share the same data model and scale posteriors:
//!
//! * [`hinge_vb`] minimizes an approximate variational bound on the
//!   hinge-loss pseudo-posterior by alternating subgradient steps on the
//!   factor means with exact variance and scale updates.
//! * [`logit_vb`] runs mean-field coordinate ascent on the Jaakkola-Jordan
//!   lower bound of a Bayesian logistic model.
//!
//! [`bounds`] evaluates the empirical PAC-Bayes risk bound at a fitted
//! state, [`data`] holds the simulators and the MovieLens reader, and
//! [`experiment`] drives full runs, cross-validation and noise sweeps.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hinge_vb;
pub mod logit_vb;
pub mod model;
pub mod special;
pub mod spectral;

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
#[allow(dead_code)]
mod oracles;

pub use error::{Error, Result};
pub use model::{Dataset, FactorMatrix, ObservedEntry, PredictorMatrix, PriorConfig, PriorFamily};
