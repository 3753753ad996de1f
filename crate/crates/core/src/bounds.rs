//! KL divergences of the scale posteriors and the empirical PAC-Bayes bound.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinge_vb::{avb, FactorizationState, ScaleDistribution, ScalePosterior};
use crate::model::{Dataset, PriorConfig, PriorFamily};
use crate::special::{digamma, gig_moments, ln_gamma, GigMoments, GigParams};

const KL_ROUNDING: f64 = 1e-12;

fn clip_rounding(kl: f64) -> Result<f64> {
    if !kl.is_finite() {
        return Err(Error::numerical(format!("KL divergence is {kl}")));
    }
    if kl < 0.0 && kl > -KL_ROUNDING * kl.abs().max(1.0) {
        Ok(0.0)
    } else {
        Ok(kl)
    }
}

/// `KL(IG(shape1, scale1) || IG(shape2, scale2))`.
pub fn kl_inv_gamma(shape1: f64, scale1: f64, shape2: f64, scale2: f64) -> Result<f64> {
    let kl = (shape1 - shape2) * digamma(shape1)? - ln_gamma(shape1)
        + ln_gamma(shape2)
        + shape2 * (scale1.ln() - scale2.ln())
        + shape1 * (scale2 - scale1) / scale1;
    clip_rounding(kl)
}

/// `KL(GIG(a, b, eta) || Gamma(alpha, beta))` from precomputed GIG moments.
pub fn kl_gig_gamma(params: &GigParams, moments: &GigMoments, prior: &PriorConfig) -> Result<f64> {
    if prior.family != PriorFamily::Gamma {
        return Err(Error::invalid("GIG posterior pairs with a Gamma prior"));
    }
    let GigParams { a, b, eta } = *params;
    // E[log q] with q the GIG density
    let e_log_q = moments.log_norm + (eta - 1.0) * moments.mean_log
        - 0.5 * (a * moments.mean + b * moments.mean_inv);
    // E[log p] with p the Gamma(alpha, rate beta) density
    let (alpha, beta) = (prior.alpha, prior.beta);
    let e_log_p =
        alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * moments.mean_log - beta * moments.mean;
    clip_rounding(e_log_q - e_log_p)
}

/// KL divergence from a scale posterior to the prior `pi^gamma`.
///
/// Inverse-gamma posteriors pair with an inverse-gamma prior and GIG
/// posteriors with a Gamma prior; other pairings are rejected.
pub fn kl_scale(post: &ScaleDistribution, prior: &PriorConfig) -> Result<f64> {
    match (post, prior.family) {
        (ScaleDistribution::InvGamma { shape, scale }, PriorFamily::InvGamma) => {
            kl_inv_gamma(*shape, *scale, prior.alpha, prior.beta)
        }
        (ScaleDistribution::Gig(params), PriorFamily::Gamma) => {
            kl_gig_gamma(params, &gig_moments(params)?, prior)
        }
        _ => Err(Error::invalid(format!(
            "scale posterior {post:?} does not pair with a {:?} prior",
            prior.family
        ))),
    }
}

/// Sum of the per-factor KL terms.
pub fn total_scale_kl(scales: &[ScalePosterior]) -> f64 {
    scales.iter().map(|s| s.kl_to_prior()).sum()
}

/// Confidence level and temperature for the empirical bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub lambda: f64,
}

impl BoundConfig {
    pub fn new(epsilon: f64, lambda: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(BoundConfig { epsilon, lambda })
    }
}

/// The empirical risk bound and its three components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BoundReport {
    pub avb: f64,
    pub lambda_over_2n: f64,
    pub confidence_term: f64,
    pub total: f64,
}

/// Assembles the bound from its parts. Kept separate from
/// [`empirical_bound`] so the dependence on `epsilon` and `lambda` can be
/// studied with the fitted objective held fixed.
pub fn assemble_bound(avb_value: f64, n: usize, epsilon: f64, lambda: f64) -> BoundReport {
    let lambda_over_2n = lambda / (2.0 * n as f64);
    let confidence_term = (1.0 / epsilon).ln() / lambda;
    BoundReport {
        avb: avb_value,
        lambda_over_2n,
        confidence_term,
        total: avb_value + lambda_over_2n + confidence_term,
    }
}

/// Upper bound, holding with probability at least `1 - epsilon`, on the
/// expected out-of-sample 0-1 risk of the fitted variational distribution.
///
/// The state must come from a fit at the same `lambda`; any member of the
/// variational family gives a valid (if looser) bound.
pub fn empirical_bound(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    bc: &BoundConfig,
) -> Result<BoundReport> {
    let value = avb(state, data, prior, bc.lambda)?;
    Ok(assemble_bound(value, data.len(), bc.epsilon, bc.lambda))
}
