//! The approximate variational bound (AVB) and its block updates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::state::FactorizationState;
use crate::error::{Error, Result};
use crate::model::{dot, hinge, Dataset, FactorMatrix, PriorConfig};

/// The AVB split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvbTerms {
    /// Empirical hinge risk of the mean predictor.
    pub hinge: f64,
    /// Lipschitz correction for the spread of the factors around their means.
    pub data_term: f64,
    /// `KL(rho, pi) / lambda`.
    pub prior_term: f64,
}

impl AvbTerms {
    pub fn remainder(&self) -> f64 {
        self.data_term + self.prior_term
    }

    pub fn total(&self) -> f64 {
        self.hinge + self.data_term + self.prior_term
    }
}

pub(crate) fn check(state: &FactorizationState, data: &Dataset, prior: &PriorConfig, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    state.validate(data.m1(), data.m2(), prior.k)
}

/// `sqrt(2 v / pi)` elementwise: the mean absolute deviation of `N(0, v)`.
fn abs_dev(v: &FactorMatrix) -> FactorMatrix {
    let mut out = v.clone();
    out.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = (2.0 * *x / PI).sqrt());
    out
}

/// `KL(rho, pi)` for the hinge family, in closed form.
pub fn kl_to_prior(state: &FactorizationState) -> f64 {
    let half_dim = 0.5 * (state.m1() + state.m2()) as f64;
    let stats = state.scale_statistics();
    let mut quad = 0.0;
    let mut logs = 0.0;
    let mut scale_part = 0.0;
    for (k, sp) in state.scales.iter().enumerate() {
        quad += sp.mean_inv() * stats[k];
        scale_part += sp.kl_to_prior() + half_dim * (sp.mean_log() - 1.0);
    }
    for v in state.vl.as_slice().iter().chain(state.vr.as_slice()) {
        logs += v.ln();
    }
    quad - 0.5 * logs + scale_part
}

pub fn avb_terms(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    lambda: f64,
) -> Result<AvbTerms> {
    check(state, data, prior, lambda)?;
    let sl = abs_dev(&state.vl);
    let sr = abs_dev(&state.vr);
    let mut hinge_sum = 0.0;
    let mut spread = 0.0;
    for e in data.entries() {
        let (li, rj) = (state.l0.row(e.row), state.r0.row(e.col));
        let (sli, srj) = (sl.row(e.row), sr.row(e.col));
        hinge_sum += hinge(e.y() * dot(li, rj));
        for k in 0..li.len() {
            spread += sli[k] * srj[k] + rj[k].abs() * sli[k] + li[k].abs() * srj[k];
        }
    }
    let n = data.len() as f64;
    Ok(AvbTerms {
        hinge: hinge_sum / n,
        data_term: spread / n,
        prior_term: kl_to_prior(state) / lambda,
    })
}

/// The remainder `R(rho, lambda)`: AVB minus the hinge risk of the mean.
pub fn remainder(state: &FactorizationState, data: &Dataset, prior: &PriorConfig, lambda: f64) -> Result<f64> {
    Ok(avb_terms(state, data, prior, lambda)?.remainder())
}

/// Approximate variational bound: hinge risk of `E[L] E[R]^T` plus the
/// remainder.
pub fn avb(state: &FactorizationState, data: &Dataset, prior: &PriorConfig, lambda: f64) -> Result<f64> {
    Ok(avb_terms(state, data, prior, lambda)?.total())
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The AVB as a function of one factor's means, the other factor held fixed.
///
/// It splits into one term per row, so rows can be stepped independently.
/// Row values omit the parts that do not depend on the means.
pub(crate) struct MeanProblem<'a> {
    data: &'a Dataset,
    other: &'a FactorMatrix,
    other_sd: FactorMatrix,
    left: bool,
    mean_inv: Vec<f64>,
    lambda: f64,
    inv_n: f64,
}

impl<'a> MeanProblem<'a> {
    pub(crate) fn left(state: &'a FactorizationState, data: &'a Dataset, lambda: f64) -> Self {
        Self::new(state, data, lambda, true)
    }

    pub(crate) fn right(state: &'a FactorizationState, data: &'a Dataset, lambda: f64) -> Self {
        Self::new(state, data, lambda, false)
    }

    fn new(state: &'a FactorizationState, data: &'a Dataset, lambda: f64, left: bool) -> Self {
        let (other, other_var) = if left {
            (&state.r0, &state.vr)
        } else {
            (&state.l0, &state.vl)
        };
        MeanProblem {
            data,
            other,
            other_sd: abs_dev(other_var),
            left,
            mean_inv: state.scales.iter().map(|s| s.mean_inv()).collect(),
            lambda,
            inv_n: 1.0 / data.len() as f64,
        }
    }

    fn positions(&self, i: usize) -> &'a [usize] {
        if self.left {
            self.data.row_entries(i)
        } else {
            self.data.col_entries(i)
        }
    }

    fn partner(&self, p: usize) -> (usize, f64) {
        let e = self.data.entries()[p];
        (if self.left { e.col } else { e.row }, e.y())
    }

    pub(crate) fn row_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut data_part = 0.0;
        for &p in self.positions(i) {
            let (j, y) = self.partner(p);
            let (oj, sj) = (self.other.row(j), self.other_sd.row(j));
            data_part += hinge(y * dot(x, oj));
            data_part += x.iter().zip(sj).map(|(a, s)| a.abs() * s).sum::<f64>();
        }
        let quad: f64 = x.iter().zip(&self.mean_inv).map(|(a, m)| m * a * a).sum();
        self.inv_n * data_part + 0.5 * quad / self.lambda
    }

    /// Subgradient of [`Self::row_value`] at `x`, written into `out`.
    pub(crate) fn row_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for &p in self.positions(i) {
            let (j, y) = self.partner(p);
            let (oj, sj) = (self.other.row(j), self.other_sd.row(j));
            // strict active set: the kink at margin 1 contributes nothing
            let active = 1.0 - y * dot(x, oj) > 0.0;
            for k in 0..out.len() {
                let mut v = sign0(x[k]) * sj[k];
                if active {
                    v -= y * oj[k];
                }
                out[k] += self.inv_n * v;
            }
        }
        for k in 0..out.len() {
            out[k] += self.mean_inv[k] * x[k] / self.lambda;
        }
    }

    fn gradient(&self, own: &FactorMatrix) -> FactorMatrix {
        let mut g = FactorMatrix::zeros(own.rows(), own.cols());
        for i in 0..own.rows() {
            self.row_gradient(i, own.row(i), g.row_mut(i));
        }
        g
    }
}

/// Subgradient of the AVB with respect to `l0` only.
pub fn subgradient_left(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    lambda: f64,
) -> Result<FactorMatrix> {
    check(state, data, prior, lambda)?;
    Ok(MeanProblem::left(state, data, lambda).gradient(&state.l0))
}

/// Subgradient of the AVB with respect to `r0` only.
pub fn subgradient_right(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    lambda: f64,
) -> Result<FactorMatrix> {
    check(state, data, prior, lambda)?;
    Ok(MeanProblem::right(state, data, lambda).gradient(&state.r0))
}

/// Subgradients of the AVB with respect to the factor means.
///
/// Selections at the kinks: `sign(0) = 0` for the absolute values and an
/// entry whose margin is exactly 1 is treated as inactive.
pub fn subgradient_means(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    lambda: f64,
) -> Result<(FactorMatrix, FactorMatrix)> {
    Ok((
        subgradient_left(state, data, prior, lambda)?,
        subgradient_right(state, data, prior, lambda)?,
    ))
}

/// Minimizer over `v > 0` of `a sqrt(v) + b v - c log v`, as `sqrt(v)`.
///
/// Stationarity in `u = sqrt(v)` is `b u^2 + (a/2) u - c = 0`.
pub fn optimal_sqrt_variance(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::numerical(format!("variance update needs b > 0, got {b}")));
    }
    if !(c > 0.0) || !(a >= 0.0) {
        return Err(Error::numerical(format!("variance update needs a >= 0, c > 0, got a={a}, c={c}")));
    }
    let half_a = 0.5 * a;
    let disc = (half_a * half_a + 4.0 * b * c).sqrt();
    // the rationalized root avoids cancellation when a^2 >> bc
    Ok(2.0 * c / (half_a + disc))
}

#[allow(clippy::too_many_arguments)]
fn side_variances(
    data: &Dataset,
    rows: usize,
    k: usize,
    other: &FactorMatrix,
    other_sd: &FactorMatrix,
    own_is_left: bool,
    mean_inv: &[f64],
    lambda: f64,
) -> Result<FactorMatrix> {
    let inv_n = 1.0 / data.len() as f64;
    let root = (2.0 / PI).sqrt();
    let c = 1.0 / (2.0 * lambda);
    let mut out = FactorMatrix::zeros(rows, k);
    let mut a = vec![0.0; k];
    for i in 0..rows {
        a.iter_mut().for_each(|x| *x = 0.0);
        let positions = if own_is_left {
            data.row_entries(i)
        } else {
            data.col_entries(i)
        };
        for &p in positions {
            let e = data.entries()[p];
            let j = if own_is_left { e.col } else { e.row };
            let (oj, sj) = (other.row(j), other_sd.row(j));
            for kk in 0..k {
                a[kk] += inv_n * root * (sj[kk] + oj[kk].abs());
            }
        }
        let row = out.row_mut(i);
        for kk in 0..k {
            let b = mean_inv[kk] / (2.0 * lambda);
            let u = optimal_sqrt_variance(a[kk], b, c)?;
            let v = u * u;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::numerical(format!(
                    "variance update gave {v:e} (a = {:e}, b = {b:e}, c = {c:e})",
                    a[kk]
                )));
            }
            row[kk] = v;
        }
    }
    Ok(out)
}

/// Exact minimization of the AVB over the variances: `vl` first with the
/// current `vr`, then `vr` with the new `vl`.
pub fn update_variances(
    state: &FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    lambda: f64,
) -> Result<(FactorMatrix, FactorMatrix)> {
    check(state, data, prior, lambda)?;
    let k = state.k();
    let mean_inv: Vec<f64> = state.scales.iter().map(|s| s.mean_inv()).collect();
    let vl = side_variances(
        data,
        state.m1(),
        k,
        &state.r0,
        &abs_dev(&state.vr),
        true,
        &mean_inv,
        lambda,
    )?;
    let vr = side_variances(data, state.m2(), k, &state.l0, &abs_dev(&vl), false, &mean_inv, lambda)?;
    Ok((vl, vr))
}
