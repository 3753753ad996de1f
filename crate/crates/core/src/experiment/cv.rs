use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::{CvGrid, ExperimentConfig, Solver};
use super::run::{derive_seed, fit_model, misclassification, FOLD_STREAM};
use crate::data::folds;
use crate::error::{Error, Result};
use crate::model::{Dataset, PriorConfig};

/// Mean errors closer than this count as a tie.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CvCell {
    pub alpha: f64,
    pub beta: f64,
    /// `None` for the logit solver.
    pub lambda_over_n: Option<f64>,
    pub k: usize,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CvReport {
    pub folds: usize,
    pub cells: Vec<CvCell>,
    /// Index into `cells` of the selected hyperparameters.
    pub best: usize,
}

impl CvReport {
    pub fn best_cell(&self) -> &CvCell {
        &self.cells[self.best]
    }
}

fn axis<T: Copy>(values: &[T], fallback: T) -> Vec<T> {
    if values.is_empty() {
        vec![fallback]
    } else {
        values.to_vec()
    }
}

/// Grid cells in `alpha, beta, lambda, k` order, the last varying fastest.
fn grid_cells(cfg: &ExperimentConfig, grid: &CvGrid, n: usize) -> Vec<(f64, f64, Option<f64>, usize)> {
    let lambdas: Vec<Option<f64>> = match cfg.solver {
        Solver::Logit => vec![None],
        Solver::Hinge => {
            let configured = cfg.lambda.map_or(1.0, |l| l / n as f64);
            let ls = grid
                .lambda_over_n
                .clone()
                .unwrap_or_else(|| CvGrid::DEFAULT_LAMBDA_OVER_N.to_vec());
            axis(&ls, configured).into_iter().map(Some).collect()
        }
    };
    let mut cells = Vec::new();
    for &a in &axis(&grid.alpha, cfg.prior.alpha) {
        for &b in &axis(&grid.beta, cfg.prior.beta) {
            for &l in &lambdas {
                for &k in &axis(&grid.k, cfg.prior.k) {
                    cells.push((a, b, l, k));
                }
            }
        }
    }
    cells
}

/// `a` should be preferred over `b`: lower error, then larger `beta`, then
/// smaller `lambda`.
fn preferred(a: &CvCell, b: &CvCell) -> bool {
    if (a.mean_error - b.mean_error).abs() > TIE_TOL {
        return a.mean_error < b.mean_error;
    }
    if a.beta != b.beta {
        return a.beta > b.beta;
    }
    match (a.lambda_over_n, b.lambda_over_n) {
        (Some(x), Some(y)) => x < y,
        _ => false,
    }
}

/// k-fold cross-validation of the validation misclassification rate over
/// the configured grid. Cells and folds run in parallel; every fit uses the
/// experiment seed.
pub fn cross_validate(cfg: &ExperimentConfig, train: &Dataset) -> Result<CvReport> {
    let settings = cfg.cv.clone().unwrap_or_default();
    if settings.folds > train.len() {
        return Err(Error::config(
            "cv.folds",
            format!("{} folds but only {} observations", settings.folds, train.len()),
        ));
    }
    let parts = folds(train.len(), settings.folds, derive_seed(cfg.seed, FOLD_STREAM))
        .map_err(|e| Error::config("cv.folds", e.to_string()))?;
    let splits: Vec<(Dataset, Dataset)> = parts
        .iter()
        .map(|held| {
            let mut keep = vec![true; train.len()];
            held.iter().for_each(|&p| keep[p] = false);
            let rest: Vec<usize> = (0..train.len()).filter(|&p| keep[p]).collect();
            Ok((train.subset(&rest)?, train.subset(held)?))
        })
        .collect::<Result<_>>()?;
    let cells = grid_cells(cfg, &settings.grid, train.len());
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..splits.len()).map(move |f| (c, f)))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (alpha, beta, ratio, k) = cells[c];
            let prior = PriorConfig::new(cfg.prior.family, alpha, beta, k)?;
            let (fit_on, check_on) = &splits[f];
            let lambda = ratio.map(|r| r * fit_on.len() as f64);
            let model = fit_model(cfg, &prior, lambda, fit_on)?;
            misclassification(&model.predictor()?, check_on)
        })
        .collect::<Result<_>>()?;
    let nf = splits.len();
    let table: Vec<CvCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &(alpha, beta, lambda_over_n, k))| {
            let fold_errors = errors[c * nf..(c + 1) * nf].to_vec();
            let mean_error = fold_errors.iter().sum::<f64>() / nf as f64;
            CvCell {
                alpha,
                beta,
                lambda_over_n,
                k,
                fold_errors,
                mean_error,
            }
        })
        .collect();
    let mut best = 0;
    for c in 1..table.len() {
        if preferred(&table[c], &table[best]) {
            best = c;
        }
    }
    Ok(CvReport {
        folds: nf,
        cells: table,
        best,
    })
}
