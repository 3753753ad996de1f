use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, FileFormat, Solver, DEFAULT_TRAIN_FRACTION};
use super::cv::{cross_validate, CvReport};
use crate::bounds::{empirical_bound, BoundConfig, BoundReport};
use crate::data::{load_dataset, parse_movielens, sample_observations, split, GroundTruth};
use crate::error::{Error, Result};
use crate::hinge_vb::{fit, HingeFit};
use crate::logit_vb::{fit_logit, LogitFit};
use crate::model::{hinge_risk, logistic_risk, sign_label, Dataset, FactorMatrix, PredictorMatrix, PriorConfig};

/// Largest increase of the AVB between iterates still counted as descent.
pub const AVB_TRACE_TOL: f64 = 1e-10;
/// Largest decrease of the ELBO between iterates still counted as ascent.
pub const ELBO_TRACE_TOL: f64 = 1e-8;

const TRUTH_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
pub(crate) const FOLD_STREAM: u64 = 3;

/// Independent seed for one consumer of the experiment seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Training data plus whatever the source offers for evaluation.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub truth: Option<GroundTruth>,
}

fn load(path: &std::path::Path, format: FileFormat) -> Result<Dataset> {
    match format {
        FileFormat::Text => load_dataset(path),
        FileFormat::Movielens => parse_movielens(path),
    }
}

/// Reindexes `test` onto the dimensions of `train`.
fn align(test: Dataset, train: &Dataset) -> Result<Dataset> {
    if test.m1() > train.m1() || test.m2() > train.m2() {
        return Err(Error::Data(format!(
            "test data is {}x{} but the training data is only {}x{}",
            test.m1(),
            test.m2(),
            train.m1(),
            train.m2()
        )));
    }
    Dataset::new(train.m1(), train.m2(), test.entries().to_vec())
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    match &cfg.data {
        DataSource::Simulate {
            truth,
            rank,
            m1,
            m2,
            noise,
            with_replacement,
            ..
        } => {
            let gt = GroundTruth::generate(*truth, *m1, *m2, *rank, derive_seed(cfg.seed, TRUTH_STREAM))?;
            let n = cfg.simulated_n().expect("simulated source");
            let obs = sample_observations(&gt, *noise, n, *with_replacement, derive_seed(cfg.seed, SAMPLE_STREAM))?;
            Ok(PreparedData {
                train: obs.data,
                test: None,
                truth: Some(gt),
            })
        }
        DataSource::File {
            path,
            format,
            test_path,
        } => {
            let train = load(path, *format)?;
            let test = match test_path {
                Some(p) => Some(align(load(p, *format)?, &train)?),
                None => None,
            };
            Ok(PreparedData {
                train,
                test,
                truth: None,
            })
        }
        DataSource::Movielens {
            path,
            train_fraction,
            split_seed,
        } => {
            let all = parse_movielens(path)?;
            let frac = train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION);
            let count = (frac * all.len() as f64).round() as usize;
            let (train, test) = split(&all, count, split_seed.unwrap_or(cfg.seed))?;
            Ok(PreparedData {
                train,
                test: Some(test),
                truth: None,
            })
        }
    }
}

/// A fitted solver.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Hinge(HingeFit),
    Logit(LogitFit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Minimized.
    Avb,
    /// Maximized.
    Elbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TraceSummary {
    pub objective: Objective,
    pub initial: f64,
    pub last: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Every step moved the objective the right way, up to
    /// [`AVB_TRACE_TOL`] or [`ELBO_TRACE_TOL`].
    pub monotone: bool,
    /// Largest step in the wrong direction, or the smallest step in the right
    /// one when negative.
    pub worst_step: f64,
}

impl TraceSummary {
    pub fn new(objective: Objective, trace: &[f64], iterations: usize, converged: bool) -> Self {
        let (sign, tol) = match objective {
            Objective::Avb => (1.0, AVB_TRACE_TOL),
            Objective::Elbo => (-1.0, ELBO_TRACE_TOL),
        };
        let worst_step = trace
            .windows(2)
            .map(|w| sign * (w[1] - w[0]))
            .fold(f64::NEG_INFINITY, f64::max);
        TraceSummary {
            objective,
            initial: trace[0],
            last: *trace.last().expect("trace is never empty"),
            iterations,
            converged,
            monotone: trace.len() < 2 || worst_step <= tol,
            worst_step: if trace.len() < 2 { 0.0 } else { worst_step },
        }
    }
}

impl FittedModel {
    pub fn solver(&self) -> Solver {
        match self {
            FittedModel::Hinge(_) => Solver::Hinge,
            FittedModel::Logit(_) => Solver::Logit,
        }
    }

    pub fn predictor(&self) -> Result<PredictorMatrix> {
        match self {
            FittedModel::Hinge(f) => f.state.predictor(),
            FittedModel::Logit(f) => f.state.predictor(),
        }
    }

    pub fn trace(&self) -> &[f64] {
        match self {
            FittedModel::Hinge(f) => &f.trace,
            FittedModel::Logit(f) => &f.trace,
        }
    }

    pub fn trace_summary(&self) -> TraceSummary {
        match self {
            FittedModel::Hinge(f) => TraceSummary::new(Objective::Avb, &f.trace, f.iterations, f.converged),
            FittedModel::Logit(f) => TraceSummary::new(Objective::Elbo, &f.trace, f.iterations, f.converged),
        }
    }

    pub fn to_saved(&self) -> SavedModel {
        let (left, right) = match self {
            FittedModel::Hinge(f) => (f.state.l0.clone(), f.state.r0.clone()),
            FittedModel::Logit(f) => (f.state.means_left(), f.state.means_right()),
        };
        SavedModel {
            solver: self.solver(),
            left,
            right,
        }
    }
}

/// Posterior means of the factors, enough to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub solver: Solver,
    pub left: FactorMatrix,
    pub right: FactorMatrix,
}

impl SavedModel {
    pub fn predictor(&self) -> Result<PredictorMatrix> {
        PredictorMatrix::factored(self.left.clone(), self.right.clone())
    }
}

/// Fits the configured solver. `lambda` defaults to the number of
/// observations.
pub fn fit_model(cfg: &ExperimentConfig, prior: &PriorConfig, lambda: Option<f64>, data: &Dataset) -> Result<FittedModel> {
    match cfg.solver {
        Solver::Hinge => {
            let lambda = lambda.unwrap_or(data.len() as f64);
            Ok(FittedModel::Hinge(fit(data, prior, &cfg.hinge_config(lambda))?))
        }
        Solver::Logit => Ok(FittedModel::Logit(fit_logit(data, prior, &cfg.logit_config())?)),
    }
}

/// Fraction of observations whose label differs from the predicted sign.
pub fn misclassification(m: &PredictorMatrix, data: &Dataset) -> Result<f64> {
    if m.dims() != (data.m1(), data.m2()) {
        return Err(Error::Dimension(format!(
            "predictor is {:?}, dataset is {}x{}",
            m.dims(),
            data.m1(),
            data.m2()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrong = data.entries().iter().filter(|e| m.predict(e.row, e.col) != e.label).count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Fraction of all entries where the predicted sign differs from the sign
/// of the truth.
pub fn truth_error(m: &PredictorMatrix, truth: &GroundTruth) -> Result<f64> {
    let (m1, m2) = truth.dims();
    if m.dims() != (m1, m2) {
        return Err(Error::Dimension(format!("predictor is {:?}, truth is {m1}x{m2}", m.dims())));
    }
    let wrong = (0..m1)
        .flat_map(|i| (0..m2).map(move |j| (i, j)))
        .filter(|&(i, j)| m.predict(i, j) != sign_label(truth.matrix.value(i, j)))
        .count();
    Ok(wrong as f64 / (m1 * m2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RiskSummary {
    /// Misclassification rate of the predicted signs.
    pub error: f64,
    pub hinge: f64,
    pub logistic: f64,
}

impl RiskSummary {
    pub fn compute(m: &PredictorMatrix, data: &Dataset) -> Result<Self> {
        Ok(RiskSummary {
            error: misclassification(m, data)?,
            hinge: hinge_risk(m, data)?,
            logistic: logistic_risk(m, data)?,
        })
    }
}

pub fn evaluate(model: &SavedModel, data: &Dataset) -> Result<RiskSummary> {
    RiskSummary::compute(&model.predictor()?, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ExperimentReport {
    pub solver: Solver,
    pub seed: u64,
    pub m1: usize,
    pub m2: usize,
    pub n_train: usize,
    pub n_test: Option<usize>,
    pub train: RiskSummary,
    pub test: Option<RiskSummary>,
    /// Simulated sources only.
    pub truth_error: Option<f64>,
    pub trace: TraceSummary,
    pub bound: Option<BoundReport>,
    pub cv: Option<CvReport>,
    /// The only field that changes between identical runs.
    pub wall_clock_secs: f64,
    /// The configuration with every default and tuned value filled in.
    pub config: ExperimentConfig,
}

/// Runs the experiment and keeps the fitted model.
pub fn run_with_model(cfg: &ExperimentConfig) -> Result<(ExperimentReport, FittedModel)> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare_data(cfg)?;
    let train = &data.train;
    let mut tuned = cfg.clone();
    let cv = match &cfg.cv {
        Some(_) => {
            let report = cross_validate(cfg, train)?;
            let best = report.best_cell();
            tuned.prior.alpha = best.alpha;
            tuned.prior.beta = best.beta;
            tuned.prior.k = best.k;
            if let Some(r) = best.lambda_over_n {
                tuned.lambda = Some(r * train.len() as f64);
            }
            Some(report)
        }
        None => None,
    };
    let lambda = match cfg.solver {
        Solver::Hinge => Some(tuned.lambda.unwrap_or(train.len() as f64)),
        Solver::Logit => None,
    };
    let model = fit_model(&tuned, &tuned.prior, lambda, train)?;
    let pred = model.predictor()?;
    let bound = match (&cfg.bound, &model) {
        (Some(b), FittedModel::Hinge(f)) => {
            let bc = BoundConfig::new(b.epsilon, lambda.expect("hinge has lambda"))?;
            Some(empirical_bound(&f.state, train, &tuned.prior, &bc)?)
        }
        _ => None,
    };
    let report = ExperimentReport {
        solver: cfg.solver,
        seed: cfg.seed,
        m1: train.m1(),
        m2: train.m2(),
        n_train: train.len(),
        n_test: data.test.as_ref().map(Dataset::len),
        train: RiskSummary::compute(&pred, train)?,
        test: data.test.as_ref().map(|t| RiskSummary::compute(&pred, t)).transpose()?,
        truth_error: data.truth.as_ref().map(|t| truth_error(&pred, t)).transpose()?,
        trace: model.trace_summary(),
        bound,
        cv,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: tuned.resolved(lambda),
    };
    Ok((report, model))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_with_model(cfg).map(|(r, _)| r)
}

/// JSON schema that every [`ExperimentReport`] validates against.
pub fn report_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentReport)).expect("schema serializes")
}
