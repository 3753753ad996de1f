use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{elbo, update_rows, update_scales, update_xi, LogitState, Side};
use crate::error::{Error, Result};
use crate::model::{Dataset, FactorMatrix, PriorConfig};
use crate::spectral::{spectral_start, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogitFitConfig {
    pub max_outer_iters: usize,
    /// Stop once the ELBO changes by less than this fraction of its size.
    pub stop_tol: f64,
    pub init: Init,
    /// Standard deviation of the random means or of the spectral jitter;
    /// `None` means `0.1 / sqrt(K)`.
    pub sigma_init: Option<f64>,
    /// Initial row covariance `v_init * I`; `None` means `1 / n`.
    pub v_init: Option<f64>,
    pub seed: u64,
}

impl Default for LogitFitConfig {
    fn default() -> Self {
        LogitFitConfig {
            max_outer_iters: 500,
            stop_tol: 1e-7,
            init: Init::default(),
            sigma_init: None,
            v_init: None,
            seed: 0,
        }
    }
}

impl LogitFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid(format!("stop tolerance must be > 0, got {}", self.stop_tol)));
        }
        if let Some(s) = self.sigma_init {
            if !(s >= 0.0) {
                return Err(Error::invalid(format!("sigma_init must be >= 0, got {s}")));
            }
        }
        if let Some(v) = self.v_init {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("v_init must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitFit {
    pub state: LogitState,
    /// ELBO at the start and after every outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogitFit {
    pub fn final_elbo(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Coordinate ascent on the ELBO: rows of `L`, rows of `R`, scales, `xi`.
pub fn fit_logit(data: &Dataset, prior: &PriorConfig, cfg: &LogitFitConfig) -> Result<LogitFit> {
    cfg.validate()?;
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = prior.k;
    let sigma = cfg.sigma_init.unwrap_or(0.1 / (k as f64).sqrt());
    let v0 = cfg.v_init.unwrap_or(1.0 / data.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let (mut l0, mut r0) = match cfg.init {
        Init::Spectral => spectral_start(data, k, cfg.seed)?,
        Init::Random => (FactorMatrix::zeros(data.m1(), k), FactorMatrix::zeros(data.m2(), k)),
    };
    for x in l0.as_mut_slice().iter_mut().chain(r0.as_mut_slice()) {
        *x += noise.sample(&mut rng);
    }
    let mut state = LogitState::from_means(&l0, &r0, v0, data, prior)?;

    let mut trace = vec![elbo(&state, data, prior)?];
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_outer_iters {
        iterations = t;
        state.rows_l = update_rows(&state, data, Side::Left)?;
        state.rows_r = update_rows(&state, data, Side::Right)?;
        state.scales = update_scales(&state, prior)?;
        state.xi = update_xi(&state, data)?;
        let value = elbo(&state, data, prior)?;
        let previous = *trace.last().unwrap();
        trace.push(value);
        if (value - previous).abs() <= cfg.stop_tol * value.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(LogitFit {
        state,
        trace,
        iterations,
        converged,
    })
}
