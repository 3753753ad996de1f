//! Mean-field variational Bayes for the logistic model.
//!
//! Each row of `L` and of `R` gets a full-covariance Gaussian, each factor
//! column an inverse-gamma or GIG scale posterior, and each observation a
//! local variational parameter `xi` for the Jaakkola-Jordan quadratic bound
//! `log sigmoid(x) >= log sigmoid(xi) + (x - xi)/2 - tau(xi) (x^2 - xi^2)`.
//! Every block update maximizes the resulting lower bound exactly, so the
//! objective never decreases.

mod fit;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinge_vb::{scales_from_statistics, ScalePosterior};
use crate::model::{log_sigmoid, Dataset, FactorMatrix, PredictorMatrix, PriorConfig};

pub use fit::{fit_logit, LogitFit, LogitFitConfig};

/// Lower limit for `xi`.
pub const XI_FLOOR: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;
const JITTER: f64 = 1e-10;

/// `tau(xi) = (sigmoid(xi) - 1/2) / (2 xi)`, the curvature of the bound.
pub fn tau(xi: f64) -> f64 {
    let a = xi.abs();
    if a < 1e-4 {
        0.125 - a * a / 96.0
    } else {
        // sigmoid(a) - 1/2 = tanh(a/2) / 2 without the cancellation
        (0.5 * a).tanh() / (4.0 * a)
    }
}

/// Lower bound on `log sigmoid(x)` that is tight at `xi = |x|`.
pub fn jj_bound(x: f64, xi: f64) -> f64 {
    log_sigmoid(xi) + 0.5 * (x - xi) - tau(xi) * (x * x - xi * xi)
}

/// Gaussian over one row of a factor matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl RowGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a mean of length {k}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::invalid("covariance is not positive definite"));
        }
        Ok(RowGaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `E[x x^T] = cov + mean mean^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }

    /// The Gaussian with the given precision matrix and `precision * mean = rhs`.
    ///
    /// On a failed Cholesky factorization `1e-10` times the mean diagonal
    /// entry is added to the diagonal, a few times at most.
    pub fn from_precision(mut precision: DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self> {
        let k = rhs.len();
        let jitter = JITTER * precision.trace() / k as f64;
        for attempt in 0..=JITTER_RETRIES {
            if let Some(chol) = Cholesky::new(precision.clone()) {
                let mean = chol.solve(rhs);
                let inv = chol.inverse();
                let cov = 0.5 * (&inv + inv.transpose());
                return Ok(RowGaussian { mean, cov });
            }
            if attempt < JITTER_RETRIES {
                for d in 0..k {
                    precision[(d, d)] += jitter;
                }
            }
        }
        Err(Error::numerical("row precision is not positive definite"))
    }
}

/// Variational parameters of the logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitState {
    pub rows_l: Vec<RowGaussian>,
    pub rows_r: Vec<RowGaussian>,
    pub scales: Vec<ScalePosterior>,
    pub xi: Vec<f64>,
}

fn means_of(rows: &[RowGaussian], k: usize) -> FactorMatrix {
    FactorMatrix::from_fn(rows.len(), k, |i, c| rows[i].mean[c])
}

impl LogitState {
    /// Rows with the given means and covariance `v_init * I`, optimal scales
    /// and optimal `xi`.
    pub fn from_means(
        l0: &FactorMatrix,
        r0: &FactorMatrix,
        v_init: f64,
        data: &Dataset,
        prior: &PriorConfig,
    ) -> Result<Self> {
        prior.validate()?;
        if !(v_init > 0.0) || !v_init.is_finite() {
            return Err(Error::invalid(format!("initial variance must be > 0, got {v_init}")));
        }
        let k = prior.k;
        if l0.cols() != k || r0.cols() != k || l0.rows() != data.m1() || r0.rows() != data.m2() {
            return Err(Error::Dimension("initial means do not match the data and prior".into()));
        }
        let row = |m: &FactorMatrix, i: usize| RowGaussian {
            mean: DVector::from_row_slice(m.row(i)),
            cov: DMatrix::from_diagonal_element(k, k, v_init),
        };
        let mut state = LogitState {
            rows_l: (0..l0.rows()).map(|i| row(l0, i)).collect(),
            rows_r: (0..r0.rows()).map(|j| row(r0, j)).collect(),
            scales: Vec::new(),
            xi: Vec::new(),
        };
        state.scales = update_scales(&state, prior)?;
        state.xi = update_xi(&state, data)?;
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.rows_l
            .first()
            .or(self.rows_r.first())
            .map_or(self.scales.len(), RowGaussian::dim)
    }

    pub fn validate(&self, data: &Dataset, prior: &PriorConfig) -> Result<()> {
        let k = prior.k;
        if self.rows_l.len() != data.m1() || self.rows_r.len() != data.m2() {
            return Err(Error::Dimension(format!(
                "state has {}x{} rows, data is {}x{}",
                self.rows_l.len(),
                self.rows_r.len(),
                data.m1(),
                data.m2()
            )));
        }
        if self.scales.len() != k || self.rows_l.iter().chain(&self.rows_r).any(|r| r.dim() != k) {
            return Err(Error::Dimension(format!("rank differs from k = {k}")));
        }
        if self.xi.len() != data.len() {
            return Err(Error::Dimension(format!(
                "{} xi values for {} observations",
                self.xi.len(),
                data.len()
            )));
        }
        if let Some(x) = self.xi.iter().find(|x| !(**x >= XI_FLOOR) || !x.is_finite()) {
            return Err(Error::invalid(format!("xi must be >= {XI_FLOOR}, got {x}")));
        }
        Ok(())
    }

    pub fn means_left(&self) -> FactorMatrix {
        means_of(&self.rows_l, self.k())
    }

    pub fn means_right(&self) -> FactorMatrix {
        means_of(&self.rows_r, self.k())
    }

    /// `E[L] E[R]^T`.
    pub fn predictor(&self) -> Result<PredictorMatrix> {
        PredictorMatrix::factored(self.means_left(), self.means_right())
    }

    /// `S_k` from the diagonal of the row second moments.
    pub fn scale_statistics(&self) -> Vec<f64> {
        let mut stats = vec![0.0; self.k()];
        for row in self.rows_l.iter().chain(&self.rows_r) {
            for (k, s) in stats.iter_mut().enumerate() {
                *s += 0.5 * (row.cov[(k, k)] + row.mean[k] * row.mean[k]);
            }
        }
        stats
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

/// Optimal Gaussian for each row of one side, the other side, the scales
/// and `xi` held fixed.
pub fn update_rows(state: &LogitState, data: &Dataset, side: Side) -> Result<Vec<RowGaussian>> {
    let k = state.k();
    let (own, other) = match side {
        Side::Left => (&state.rows_l, &state.rows_r),
        Side::Right => (&state.rows_r, &state.rows_l),
    };
    let moments: Vec<DMatrix<f64>> = other.iter().map(RowGaussian::second_moment).collect();
    let prior_precision = DVector::from_iterator(k, state.scales.iter().map(|s| s.mean_inv()));
    (0..own.len())
        .into_par_iter()
        .map(|i| {
            let positions = match side {
                Side::Left => data.row_entries(i),
                Side::Right => data.col_entries(i),
            };
            let mut precision = DMatrix::from_diagonal(&prior_precision);
            let mut rhs = DVector::zeros(k);
            for &p in positions {
                let e = data.entries()[p];
                let j = match side {
                    Side::Left => e.col,
                    Side::Right => e.row,
                };
                precision += 2.0 * tau(state.xi[p]) * &moments[j];
                rhs += 0.5 * e.y() * &other[j].mean;
            }
            RowGaussian::from_precision(precision, &rhs)
        })
        .collect()
}

/// `E[<L_i, R_j>^2]` for independent Gaussian rows.
pub fn product_second_moment(l: &RowGaussian, r_moment: &DMatrix<f64>) -> f64 {
    let quad = (l.mean.transpose() * r_moment * &l.mean)[(0, 0)];
    let trace = (&l.cov * r_moment).trace();
    quad + trace
}

/// Optimal `xi`: the root mean square of the predicted entry, floored.
pub fn update_xi(state: &LogitState, data: &Dataset) -> Result<Vec<f64>> {
    let moments: Vec<DMatrix<f64>> = state.rows_r.iter().map(RowGaussian::second_moment).collect();
    let xi: Vec<f64> = data
        .entries()
        .par_iter()
        .map(|e| {
            product_second_moment(&state.rows_l[e.row], &moments[e.col])
                .max(0.0)
                .sqrt()
                .max(XI_FLOOR)
        })
        .collect();
    if let Some(x) = xi.iter().find(|x| !x.is_finite()) {
        return Err(Error::numerical(format!("xi update produced {x}")));
    }
    Ok(xi)
}

/// Optimal scale posteriors for the current rows.
pub fn update_scales(state: &LogitState, prior: &PriorConfig) -> Result<Vec<ScalePosterior>> {
    scales_from_statistics(
        &state.scale_statistics(),
        state.rows_l.len(),
        state.rows_r.len(),
        prior,
    )
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::numerical("covariance lost positive definiteness"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `KL(rho, pi)` over all rows and scales.
pub fn kl_to_prior(state: &LogitState) -> Result<f64> {
    let k = state.k();
    let mean_log: f64 = state.scales.iter().map(|s| s.mean_log()).sum();
    let mut total = 0.0;
    for row in state.rows_l.iter().chain(&state.rows_r) {
        let mut quad = 0.0;
        for (c, s) in state.scales.iter().enumerate() {
            quad += s.mean_inv() * (row.cov[(c, c)] + row.mean[c] * row.mean[c]);
        }
        total += 0.5 * (quad + mean_log - log_det_spd(&row.cov)? - k as f64);
    }
    total += state.scales.iter().map(|s| s.kl_to_prior()).sum::<f64>();
    Ok(total)
}

/// The lower bound `L(rho, xi)` on the log evidence.
pub fn elbo(state: &LogitState, data: &Dataset, prior: &PriorConfig) -> Result<f64> {
    state.validate(data, prior)?;
    let moments: Vec<DMatrix<f64>> = state.rows_r.iter().map(RowGaussian::second_moment).collect();
    let mut fit = 0.0;
    for (e, &xi) in data.entries().iter().zip(&state.xi) {
        let l = &state.rows_l[e.row];
        let mean = l.mean.dot(&state.rows_r[e.col].mean);
        let second = product_second_moment(l, &moments[e.col]);
        fit += log_sigmoid(xi) + 0.5 * (e.y() * mean - xi) - tau(xi) * (second - xi * xi);
    }
    let value = fit - kl_to_prior(state)?;
    if !value.is_finite() {
        return Err(Error::numerical(format!("ELBO is {value}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sigmoid, ObservedEntry, PriorFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn tau_values() {
        assert_eq!(tau(0.0), 0.125);
        assert!((tau(1.0) - 0.5 * (sigmoid(1.0) - 0.5)).abs() < 1e-16);
        assert!((tau(1.0) - 0.115_529_289_315_002_45).abs() < 1e-15);
        for &x in &[1e-5, 1e-3, 0.7, 30.0] {
            assert_eq!(tau(-x), tau(x));
        }
        // both branches agree at the switch
        let direct = (sigmoid(1e-4) - 0.5) / 2e-4;
        assert!((tau(1e-4) - direct).abs() < 1e-9);
    }

    #[test]
    fn bound_is_tight_at_abs_x() {
        for &x in &[-3.0, -0.2, 0.0, 0.5, 7.0] {
            let xi = f64::abs(x);
            assert!((jj_bound(x, xi) - log_sigmoid(x)).abs() < 1e-12);
        }
    }

    fn ig(k: usize) -> PriorConfig {
        PriorConfig::new(PriorFamily::InvGamma, 1.0, 1.0, k).unwrap()
    }

    #[test]
    fn scalar_row_update() {
        // one observation y = +1 against a deterministic partner with mean 1
        let precision = DMatrix::from_element(1, 1, 1.0 + 2.0 * 0.125 * 1.0);
        let rhs = DVector::from_element(1, 0.5);
        let g = RowGaussian::from_precision(precision, &rhs).unwrap();
        assert!((g.cov[(0, 0)] - 0.8).abs() < 1e-15);
        assert!((g.mean[0] - 0.4).abs() < 1e-15);
    }

    fn random_state(m1: usize, m2: usize, data: &Dataset, prior: &PriorConfig, seed: u64) -> LogitState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = prior.k;
        let l = FactorMatrix::from_fn(m1, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = FactorMatrix::from_fn(m2, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut s = LogitState::from_means(&l, &r, 0.5, data, prior).unwrap();
        for row in s.rows_l.iter_mut().chain(s.rows_r.iter_mut()) {
            let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
            row.cov = &a * a.transpose() + DMatrix::identity(k, k) * 0.1;
        }
        s.xi = update_xi(&s, data).unwrap();
        s
    }

    #[test]
    fn empty_row_gets_the_prior() {
        let prior = ig(2);
        let data = Dataset::new(3, 2, vec![ObservedEntry::new(0, 1, 1)]).unwrap();
        let s = random_state(3, 2, &data, &prior, 1);
        let rows = update_rows(&s, &data, Side::Left).unwrap();
        for c in 0..2 {
            assert_eq!(rows[2].mean[c], 0.0);
            assert!((rows[2].cov[(c, c)] - 1.0 / s.scales[c].mean_inv()).abs() < 1e-14);
        }
        assert_eq!(rows[2].cov[(0, 1)], 0.0);
    }

    #[test]
    fn covariances_are_symmetric() {
        let prior = ig(3);
        let entries = (0..12).map(|p| ObservedEntry::new(p % 4, p % 3, if p % 5 < 2 { 1 } else { -1 })).collect();
        let data = Dataset::new(4, 3, entries).unwrap();
        let s = random_state(4, 3, &data, &prior, 2);
        for rows in [update_rows(&s, &data, Side::Left).unwrap(), update_rows(&s, &data, Side::Right).unwrap()] {
            for r in rows {
                assert!((&r.cov - r.cov.transpose()).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn xi_special_cases() {
        let k = 1;
        let prior = ig(k);
        let data = Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, 1)]).unwrap();
        let std = |m: f64, v: f64| RowGaussian {
            mean: DVector::from_element(1, m),
            cov: DMatrix::from_element(1, 1, v),
        };
        let mut s = LogitState::from_means(&FactorMatrix::zeros(1, 1), &FactorMatrix::zeros(1, 1), 1.0, &data, &prior)
            .unwrap();
        s.rows_l = vec![std(0.0, 1.0)];
        s.rows_r = vec![std(0.0, 1.0)];
        assert!((update_xi(&s, &data).unwrap()[0] - 1.0).abs() < 1e-15);
        s.rows_l = vec![std(-1.5, 0.0)];
        s.rows_r = vec![std(2.0, 0.0)];
        assert!((update_xi(&s, &data).unwrap()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn xi_matches_monte_carlo() {
        let prior = ig(3);
        let data = Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, 1)]).unwrap();
        let s = random_state(1, 1, &data, &prior, 7);
        let (l, r) = (&s.rows_l[0], &s.rows_r[0]);
        let cl = Cholesky::new(l.cov.clone()).unwrap().l();
        let cr = Cholesky::new(r.cov.clone()).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let zl = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let zr = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = (&l.mean + &cl * zl).dot(&(&r.mean + &cr * zr));
            sum += x * x;
            sum2 += x.powi(4);
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let xi = update_xi(&s, &data).unwrap()[0];
        assert!((xi * xi - mean).abs() < 3.0 * se, "{} vs {mean} +- {se}", xi * xi);
    }

    #[test]
    fn no_data_elbo_is_minus_kl() {
        let prior = ig(2);
        let data = Dataset::new(2, 2, vec![]).unwrap();
        let l = FactorMatrix::from_fn(2, 2, |i, k| 0.3 * (i + k) as f64);
        let s = LogitState::from_means(&l, &l, 0.7, &data, &prior).unwrap();
        let kl = kl_to_prior(&s).unwrap();
        assert!(kl >= 0.0);
        assert!((elbo(&s, &data, &prior).unwrap() + kl).abs() < 1e-14);
    }

    #[test]
    fn single_entry_hand_expansion() {
        let prior = ig(1);
        let data = Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, -1)]).unwrap();
        let mut s =
            LogitState::from_means(&FactorMatrix::filled(1, 1, 0.5), &FactorMatrix::filled(1, 1, 2.0), 0.25, &data, &prior)
                .unwrap();
        s.xi = vec![0.9];
        let (ml, vl, mr, vr) = (0.5, 0.25, 2.0, 0.25);
        let ex = ml * mr;
        let ex2 = (vl + ml * ml) * (vr + mr * mr);
        let t = tau(0.9);
        let data_part = log_sigmoid(0.9) + 0.5 * (-ex - 0.9) - t * (ex2 - 0.81);
        let sc = s.scales[0];
        let row_kl = |m: f64, v: f64| 0.5 * (sc.mean_inv() * (v + m * m) + sc.mean_log() - v.ln() - 1.0);
        let expected = data_part - row_kl(ml, vl) - row_kl(mr, vr) - sc.kl_to_prior();
        assert!((elbo(&s, &data, &prior).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn each_block_raises_the_elbo() {
        let prior = PriorConfig::new(PriorFamily::Gamma, 1.5, 0.5, 2).unwrap();
        let entries = (0..20).map(|p| ObservedEntry::new(p % 5, (p * 3) % 4, if p % 3 == 0 { -1 } else { 1 })).collect();
        let data = Dataset::new(5, 4, entries).unwrap();
        let mut s = random_state(5, 4, &data, &prior, 3);
        let mut last = elbo(&s, &data, &prior).unwrap();
        for _ in 0..5 {
            s.rows_l = update_rows(&s, &data, Side::Left).unwrap();
            let a = elbo(&s, &data, &prior).unwrap();
            s.rows_r = update_rows(&s, &data, Side::Right).unwrap();
            let b = elbo(&s, &data, &prior).unwrap();
            s.scales = update_scales(&s, &prior).unwrap();
            let c = elbo(&s, &data, &prior).unwrap();
            s.xi = update_xi(&s, &data).unwrap();
            let d = elbo(&s, &data, &prior).unwrap();
            for v in [a, b, c, d] {
                assert!(v >= last - 1e-10, "{v} < {last}");
                last = v;
            }
        }
    }

    #[test]
    fn duplicate_observation_shrinks_covariance() {
        let prior = ig(2);
        let one = Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, 1)]).unwrap();
        let two = Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, 1); 2]).unwrap();
        let s = random_state(1, 1, &one, &prior, 4);
        let mut s2 = s.clone();
        s2.xi = vec![s.xi[0]; 2];
        let a = &update_rows(&s, &one, Side::Left).unwrap()[0].cov;
        let b = &update_rows(&s2, &two, Side::Left).unwrap()[0].cov;
        // a - b must be positive semidefinite
        let eig = (a - b).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-12, "{eig}");
    }

    #[test]
    fn jitter_rescues_singular_precision() {
        // rank one: plain Cholesky fails, one jitter step fixes it
        let p = DMatrix::from_element(2, 2, 1.0);
        assert!(Cholesky::new(p.clone()).is_none());
        let g = RowGaussian::from_precision(p, &DVector::from_element(2, 1.0)).unwrap();
        assert!(g.cov.iter().all(|v| v.is_finite()));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            RowGaussian::from_precision(bad, &DVector::zeros(2)),
            Err(Error::Numerical(_))
        ));
    }
}
