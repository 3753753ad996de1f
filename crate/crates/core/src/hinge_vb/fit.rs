use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::objective::{avb, check, update_variances, MeanProblem};
use super::state::{update_scales, FactorizationState};
use crate::error::{Error, Result};
use crate::model::{dot, Dataset, PriorConfig};
use crate::spectral::{spectral_start, Init};

/// How the step on the factor means is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// Armijo backtracking on the AVB. Each search starts from twice the
    /// last accepted step and keeps doubling while that still pays off.
    Backtracking {
        initial: f64,
        shrink: f64,
        max_backtracks: usize,
    },
    /// `initial / sqrt(t)` with no descent check.
    Schedule { initial: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            initial: 1.0,
            shrink: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HingeFitConfig {
    pub lambda: f64,
    pub max_outer_iters: usize,
    /// Stop once the squared change of the mean predictor over the observed
    /// entries drops to this value.
    pub stop_tol: f64,
    pub step: StepRule,
    pub init: Init,
    /// Standard deviation of the random means, or of the jitter added to the
    /// spectral start; `None` means `0.1 / sqrt(K)`.
    pub sigma_init: Option<f64>,
    /// Initial variances; `None` means `1 / n`.
    pub v_init: Option<f64>,
    pub seed: u64,
    /// Independent starts; the one with the lowest final AVB is kept.
    pub restarts: usize,
}

impl Default for HingeFitConfig {
    fn default() -> Self {
        HingeFitConfig {
            lambda: 1.0,
            max_outer_iters: 1000,
            stop_tol: 1e-6,
            step: StepRule::default(),
            init: Init::default(),
            sigma_init: None,
            v_init: None,
            seed: 0,
            restarts: 1,
        }
    }
}

impl HingeFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid(format!("stop tolerance must be > 0, got {}", self.stop_tol)));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("at least one restart is needed"));
        }
        match self.step {
            StepRule::Backtracking {
                initial,
                shrink,
                ..
            } => {
                if !(initial > 0.0) || !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::invalid(format!(
                        "backtracking needs initial step > 0 and shrink in (0, 1), got {initial}, {shrink}"
                    )));
                }
            }
            StepRule::Schedule { initial } => {
                if !(initial > 0.0) {
                    return Err(Error::invalid(format!("initial step must be > 0, got {initial}")));
                }
            }
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

/// Result of a hinge fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HingeFit {
    pub state: FactorizationState,
    /// AVB at the start and after every outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl HingeFit {
    pub fn final_avb(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_EXPANSIONS: usize = 20;

fn observed_predictions(state: &FactorizationState, data: &Dataset) -> Vec<f64> {
    data.entries()
        .iter()
        .map(|e| dot(state.l0.row(e.row), state.r0.row(e.col)))
        .collect()
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("{what} is {value}; the fit diverged")))
    }
}

struct RowSearch {
    shrink: f64,
    max_backtracks: usize,
}

impl RowSearch {
    /// Armijo search along the negative subgradient of one row. Starts from
    /// `last / shrink` and keeps growing the step while the first trial is
    /// accepted and the value still drops. Returns the accepted step, or the
    /// smallest one tried with the row left unchanged.
    fn run(&self, problem: &MeanProblem, i: usize, x: &mut [f64], last: f64) -> f64 {
        let k = x.len();
        let mut g = vec![0.0; k];
        problem.row_gradient(i, x, &mut g);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return last;
        }
        let f0 = problem.row_value(i, x);
        let mut trial = vec![0.0; k];
        let value_at = |eta: f64, trial: &mut Vec<f64>| {
            for c in 0..k {
                trial[c] = x[c] - eta * g[c];
            }
            problem.row_value(i, trial)
        };
        let first = last / self.shrink;
        let mut eta = first;
        for _ in 0..=self.max_backtracks {
            let f = value_at(eta, &mut trial);
            if f <= f0 - ARMIJO * eta * g2 {
                let mut best = (eta, f);
                if eta == first {
                    for _ in 0..MAX_EXPANSIONS {
                        let bigger = best.0 / self.shrink;
                        let fb = value_at(bigger, &mut trial);
                        if !(fb <= f0 - ARMIJO * bigger * g2 && fb < best.1) {
                            break;
                        }
                        best = (bigger, fb);
                    }
                }
                for c in 0..k {
                    x[c] -= best.0 * g[c];
                }
                return best.0;
            }
            eta *= self.shrink;
        }
        eta / self.shrink
    }
}

struct Stepper {
    rule: StepRule,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Stepper {
    fn new(rule: StepRule, m1: usize, m2: usize) -> Self {
        let start = match rule {
            StepRule::Backtracking { initial, .. } => initial,
            StepRule::Schedule { initial } => initial,
        };
        Stepper {
            rule,
            left: vec![start; m1],
            right: vec![start; m2],
        }
    }

    /// Steps the means of `L` (then `R` when `left` is false) in place.
    fn step(&mut self, state: &mut FactorizationState, left: bool, t: usize, data: &Dataset, lambda: f64) {
        let problem = if left {
            MeanProblem::left(state, data, lambda)
        } else {
            MeanProblem::right(state, data, lambda)
        };
        let mut means = if left { state.l0.clone() } else { state.r0.clone() };
        let k = means.cols();
        let steps = if left { &mut self.left } else { &mut self.right };
        match self.rule {
            StepRule::Schedule { initial } => {
                let eta = initial / (t as f64).sqrt();
                means
                    .as_mut_slice()
                    .par_chunks_mut(k.max(1))
                    .enumerate()
                    .for_each(|(i, x)| {
                        let mut g = vec![0.0; k];
                        problem.row_gradient(i, x, &mut g);
                        x.iter_mut().zip(&g).for_each(|(a, d)| *a -= eta * d);
                    });
            }
            StepRule::Backtracking {
                shrink,
                max_backtracks,
                ..
            } => {
                let search = RowSearch {
                    shrink,
                    max_backtracks,
                };
                means
                    .as_mut_slice()
                    .par_chunks_mut(k.max(1))
                    .zip(steps.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (x, last))| *last = search.run(&problem, i, x, *last));
            }
        }
        if left {
            state.l0 = means;
        } else {
            state.r0 = means;
        }
    }
}

/// Runs the alternating scheme from a given state.
pub fn fit_from(
    mut state: FactorizationState,
    data: &Dataset,
    prior: &PriorConfig,
    cfg: &HingeFitConfig,
) -> Result<HingeFit> {
    cfg.validate()?;
    prior.validate()?;
    let lambda = cfg.lambda;
    check(&state, data, prior, lambda)?;
    let mut trace = vec![finite(avb(&state, data, prior, lambda)?, "AVB")?];
    let mut stepper = Stepper::new(cfg.step, state.m1(), state.m2());
    let mut previous = observed_predictions(&state, data);
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_outer_iters {
        iterations = t;
        stepper.step(&mut state, true, t, data, lambda);
        stepper.step(&mut state, false, t, data, lambda);
        let (vl, vr) = update_variances(&state, data, prior, lambda)?;
        state.vl = vl;
        state.vr = vr;
        state.scales = update_scales(&state, prior)?;
        trace.push(finite(avb(&state, data, prior, lambda)?, "AVB")?);
        let current = observed_predictions(&state, data);
        let change: f64 = current.iter().zip(&previous).map(|(a, b)| (a - b).powi(2)).sum();
        previous = current;
        if change <= cfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(HingeFit {
        state,
        trace,
        iterations,
        converged,
    })
}

/// Fits the hinge variational approximation from random starts.
pub fn fit(data: &Dataset, prior: &PriorConfig, cfg: &HingeFitConfig) -> Result<HingeFit> {
    cfg.validate()?;
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sigma = cfg.sigma_init.unwrap_or(0.1 / (prior.k as f64).sqrt());
    let v0 = cfg.v_init.unwrap_or(1.0 / data.len() as f64);
    let spectral = match cfg.init {
        Init::Spectral => Some(spectral_start(data, prior.k, cfg.seed)?),
        Init::Random => None,
    };
    let mut best: Option<HingeFit> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let init = match &spectral {
            Some((l, r)) => {
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                let mut l = l.clone();
                let mut r = r.clone();
                for x in l.as_mut_slice().iter_mut().chain(r.as_mut_slice()) {
                    *x += noise.sample(&mut rng);
                }
                FactorizationState::from_means(l, r, prior, v0)?
            }
            None => FactorizationState::initialize(data.m1(), data.m2(), prior, sigma, v0, &mut rng)?,
        };
        let run = fit_from(init, data, prior, cfg)?;
        if best.as_ref().is_none_or(|b| run.final_avb() < b.final_avb()) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
