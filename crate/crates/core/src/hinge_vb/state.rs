use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scales::{scales_from_statistics, ScalePosterior};
use crate::error::{Error, Result};
use crate::model::{FactorMatrix, PredictorMatrix, PriorConfig};

/// Parameters of a member of the hinge variational family: Gaussian factor
/// entries with means `l0`, `r0` and variances `vl`, `vr`, plus one scale
/// posterior per factor column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationState {
    pub l0: FactorMatrix,
    pub r0: FactorMatrix,
    pub vl: FactorMatrix,
    pub vr: FactorMatrix,
    pub scales: Vec<ScalePosterior>,
}

impl FactorizationState {
    /// Random means with standard deviation `sigma_init`, variances `v_init`
    /// and scales set to their optimum for these moments.
    pub fn initialize<R: Rng + ?Sized>(
        m1: usize,
        m2: usize,
        prior: &PriorConfig,
        sigma_init: f64,
        v_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        prior.validate()?;
        if !(sigma_init >= 0.0) || !(v_init > 0.0) {
            return Err(Error::invalid(format!(
                "initial scale must be >= 0 and variance > 0, got {sigma_init}, {v_init}"
            )));
        }
        let normal = Normal::new(0.0, sigma_init).map_err(|e| Error::invalid(e.to_string()))?;
        let l0 = FactorMatrix::from_fn(m1, prior.k, |_, _| normal.sample(rng));
        let r0 = FactorMatrix::from_fn(m2, prior.k, |_, _| normal.sample(rng));
        Self::from_means(l0, r0, prior, v_init)
    }

    /// Given means, constant variances `v_init` and optimal scales.
    pub fn from_means(l0: FactorMatrix, r0: FactorMatrix, prior: &PriorConfig, v_init: f64) -> Result<Self> {
        prior.validate()?;
        if !(v_init > 0.0) || !v_init.is_finite() {
            return Err(Error::invalid(format!("initial variance must be > 0, got {v_init}")));
        }
        if l0.cols() != prior.k || r0.cols() != prior.k {
            return Err(Error::Dimension(format!(
                "means have {} and {} columns, prior has k = {}",
                l0.cols(),
                r0.cols(),
                prior.k
            )));
        }
        let mut state = FactorizationState {
            vl: FactorMatrix::filled(l0.rows(), prior.k, v_init),
            vr: FactorMatrix::filled(r0.rows(), prior.k, v_init),
            l0,
            r0,
            scales: Vec::new(),
        };
        state.scales = state.optimal_scales(prior)?;
        Ok(state)
    }

    pub fn m1(&self) -> usize {
        self.l0.rows()
    }

    pub fn m2(&self) -> usize {
        self.r0.rows()
    }

    pub fn k(&self) -> usize {
        self.l0.cols()
    }

    /// Checks shapes against `(m1, m2, k)` and positivity of the variances.
    pub fn validate(&self, m1: usize, m2: usize, k: usize) -> Result<()> {
        let shapes = [
            ("l0", &self.l0, m1),
            ("r0", &self.r0, m2),
            ("vl", &self.vl, m1),
            ("vr", &self.vr, m2),
        ];
        for (name, mat, rows) in shapes {
            if mat.rows() != rows || mat.cols() != k {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{k}",
                    mat.rows(),
                    mat.cols()
                )));
            }
        }
        if self.scales.len() != k {
            return Err(Error::Dimension(format!(
                "{} scale posteriors for k = {k}",
                self.scales.len()
            )));
        }
        for v in self.vl.as_slice().iter().chain(self.vr.as_slice()) {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("variance must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// `S_k = (sum_i (vl + l0^2) + sum_j (vr + r0^2)) / 2` for each column.
    pub fn scale_statistics(&self) -> Vec<f64> {
        let mut stats = vec![0.0; self.k()];
        for (means, vars) in [(&self.l0, &self.vl), (&self.r0, &self.vr)] {
            for i in 0..means.rows() {
                for (k, (m, v)) in means.row(i).iter().zip(vars.row(i)).enumerate() {
                    stats[k] += 0.5 * (v + m * m);
                }
            }
        }
        stats
    }

    fn optimal_scales(&self, prior: &PriorConfig) -> Result<Vec<ScalePosterior>> {
        scales_from_statistics(&self.scale_statistics(), self.m1(), self.m2(), prior)
    }

    /// Mean predictor `E[L] E[R]^T`.
    pub fn predictor(&self) -> Result<PredictorMatrix> {
        PredictorMatrix::factored(self.l0.clone(), self.r0.clone())
    }

    /// Simultaneously reorders the factor columns.
    pub fn permute_factors(&self, perm: &[usize]) -> FactorizationState {
        FactorizationState {
            l0: self.l0.permute_columns(perm),
            r0: self.r0.permute_columns(perm),
            vl: self.vl.permute_columns(perm),
            vr: self.vr.permute_columns(perm),
            scales: perm.iter().map(|&p| self.scales[p]).collect(),
        }
    }
}

/// Exact mean-field update of the scale posteriors.
pub fn update_scales(state: &FactorizationState, prior: &PriorConfig) -> Result<Vec<ScalePosterior>> {
    state.optimal_scales(prior)
}
