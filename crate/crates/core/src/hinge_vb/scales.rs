use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::model::{PriorConfig, PriorFamily};
use crate::special::{digamma, gig_moments, GigParams};

/// Variational distribution of one factor scale `gamma_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ScaleDistribution {
    InvGamma { shape: f64, scale: f64 },
    Gig(GigParams),
}

/// A scale distribution together with the moments the solvers need.
///
/// Fields are private so the cached moments cannot drift from the
/// parameters; build through [`ScalePosterior::inv_gamma`],
/// [`ScalePosterior::gig`] or [`ScalePosterior::optimal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePosterior {
    distribution: ScaleDistribution,
    mean_inv: f64,
    mean_log: f64,
    kl_to_prior: f64,
}

impl ScalePosterior {
    pub fn inv_gamma(shape: f64, scale: f64, prior: &PriorConfig) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
            return Err(Error::invalid(format!(
                "inverse-gamma needs shape > 0 and scale > 0, got ({shape}, {scale})"
            )));
        }
        let distribution = ScaleDistribution::InvGamma { shape, scale };
        Ok(ScalePosterior {
            distribution,
            mean_inv: shape / scale,
            mean_log: scale.ln() - digamma(shape)?,
            kl_to_prior: bounds::kl_scale(&distribution, prior)?,
        })
    }

    pub fn gig(params: GigParams, prior: &PriorConfig) -> Result<Self> {
        let moments = gig_moments(&params)?;
        let distribution = ScaleDistribution::Gig(params);
        Ok(ScalePosterior {
            distribution,
            mean_inv: moments.mean_inv,
            mean_log: moments.mean_log,
            kl_to_prior: bounds::kl_gig_gamma(&params, &moments, prior)?,
        })
    }

    /// Mean-field optimum given `s = E[(sum_i L_ik^2 + sum_j R_jk^2) / 2]`.
    ///
    /// Inverse-gamma prior: `IG(alpha + (m1+m2)/2, beta + s)`.
    /// Gamma prior: `GIG(a = 2 beta, b = 2 s, eta = alpha - (m1+m2)/2)`.
    pub fn optimal(s: f64, m1: usize, m2: usize, prior: &PriorConfig) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::numerical(format!(
                "scale statistic must be positive and finite, got {s}"
            )));
        }
        let half_dim = 0.5 * (m1 + m2) as f64;
        match prior.family {
            PriorFamily::InvGamma => Self::inv_gamma(prior.alpha + half_dim, prior.beta + s, prior),
            PriorFamily::Gamma => {
                let params = GigParams::new(2.0 * prior.beta, 2.0 * s, prior.alpha - half_dim)?;
                Self::gig(params, prior)
            }
        }
    }

    pub fn distribution(&self) -> &ScaleDistribution {
        &self.distribution
    }

    /// `E[1 / gamma]`
    pub fn mean_inv(&self) -> f64 {
        self.mean_inv
    }

    /// `E[log gamma]`
    pub fn mean_log(&self) -> f64 {
        self.mean_log
    }

    pub fn kl_to_prior(&self) -> f64 {
        self.kl_to_prior
    }
}

/// Optimal scale posteriors for the given per-factor statistics.
pub fn scales_from_statistics(
    stats: &[f64],
    m1: usize,
    m2: usize,
    prior: &PriorConfig,
) -> Result<Vec<ScalePosterior>> {
    stats
        .iter()
        .map(|&s| ScalePosterior::optimal(s, m1, m2, prior))
        .collect()
}
