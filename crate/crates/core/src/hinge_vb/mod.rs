//! Variational approximation of the hinge-loss pseudo-posterior.
//!
//! The factor entries are independent Gaussians and each factor column has
//! its own scale posterior. The solver alternates a subgradient step on the
//! means of `L`, then of `R`, with exact minimization over the variances and
//! the scales.

mod fit;
mod objective;
mod scales;
mod state;

pub use fit::{fit, fit_from, HingeFit, HingeFitConfig, StepRule};
pub use objective::{
    avb, avb_terms, kl_to_prior, optimal_sqrt_variance, remainder, subgradient_left, subgradient_means,
    subgradient_right, update_variances, AvbTerms,
};
pub use scales::{scales_from_statistics, ScaleDistribution, ScalePosterior};
pub use state::{update_scales, FactorizationState};
