//! Truncated SVD of the rescaled observation matrix, used to start the
//! solvers near the dominant low-rank structure of the labels.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, Dataset, FactorMatrix};

const POWER_ITERS: usize = 60;

/// Starting point for the factor means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Truncated SVD of the rescaled label matrix plus Gaussian jitter.
    #[default]
    Spectral,
    /// Centered Gaussian entries.
    Random,
}

/// `X v` where `X` is the sparse `m1 x m2` matrix with `(m1 m2 / n) y` at
/// each observed position (repeats add up).
fn apply(data: &Dataset, scale: f64, v: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
    let rows = if transpose { data.m2() } else { data.m1() };
    let mut out = DMatrix::zeros(rows, v.ncols());
    for e in data.entries() {
        let (to, from) = if transpose { (e.col, e.row) } else { (e.row, e.col) };
        let w = scale * e.y();
        for k in 0..v.ncols() {
            out[(to, k)] += w * v[(from, k)];
        }
    }
    out
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Rank-`k` factors `(U sqrt(S), V sqrt(S))` of the observation matrix
/// scaled by `m1 m2 / n`, whose expectation is the matrix of mean labels.
///
/// Computed by block subspace iteration, so only the sparse entries are
/// touched. Columns come out in decreasing singular value order.
pub fn spectral_factors(data: &Dataset, k: usize, seed: u64) -> Result<(FactorMatrix, FactorMatrix)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (m1, m2) = (data.m1(), data.m2());
    if k == 0 || k > m1.min(m2) {
        return Err(Error::invalid(format!("rank {k} is not in 1..={}", m1.min(m2))));
    }
    let scale = (m1 as f64) * (m2 as f64) / data.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DMatrix::from_fn(m2, k, |_, _| StandardNormal.sample(&mut rng));
    let mut v = orthonormalize(start);
    let mut u = orthonormalize(apply(data, scale, &v, false));
    for _ in 0..POWER_ITERS {
        v = orthonormalize(apply(data, scale, &u, true));
        u = orthonormalize(apply(data, scale, &v, false));
    }
    // project and finish with a small dense SVD: X ~ U (U^T X V) V^T
    let xv = apply(data, scale, &v, false);
    let core = u.transpose() * xv;
    let svd = core.svd(true, true);
    let (cu, cvt) = match (svd.u, svd.v_t) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::numerical("SVD of the projected matrix failed")),
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let left = &u * cu;
    let right = &v * cvt.transpose();
    let l = FactorMatrix::from_fn(m1, k, |i, c| {
        let s = order[c];
        left[(i, s)] * svd.singular_values[s].sqrt()
    });
    let r = FactorMatrix::from_fn(m2, k, |j, c| {
        let s = order[c];
        right[(j, s)] * svd.singular_values[s].sqrt()
    });
    Ok((l, r))
}

/// [`spectral_factors`] rescaled so the predictions have unit mean square
/// over the observed entries.
pub fn spectral_start(data: &Dataset, k: usize, seed: u64) -> Result<(FactorMatrix, FactorMatrix)> {
    let (mut l, mut r) = spectral_factors(data, k, seed)?;
    let ms = data
        .entries()
        .iter()
        .map(|e| dot(l.row(e.row), r.row(e.col)).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    if ms > 0.0 && ms.is_finite() {
        let c = ms.powf(-0.25);
        l.as_mut_slice()
            .iter_mut()
            .chain(r.as_mut_slice())
            .for_each(|x| *x *= c);
    }
    Ok((l, r))
}
