use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Solver};
use super::run::{fit_model, prepare_data, truth_error};
use crate::data::NoiseSpec;
use crate::error::{Error, Result};

/// Mean error against the truth at one flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub hinge_error: f64,
    pub logit_error: f64,
}

/// Both solvers on simulated data with switch noise at each level, averaged
/// over `replications` seeds starting at the experiment seed. Every level
/// sees the same truths and positions.
pub fn sweep_noise(cfg: &ExperimentConfig, levels: &[f64], replications: usize) -> Result<Vec<SweepRow>> {
    if !matches!(cfg.data, DataSource::Simulate { .. }) {
        return Err(Error::config("data.source", "a noise sweep needs a simulated source"));
    }
    if levels.is_empty() {
        return Err(Error::config("levels", "no noise levels given"));
    }
    if let Some(i) = levels.iter().position(|p| !(*p >= 0.0 && *p < 1.0)) {
        return Err(Error::config(format!("levels[{i}]"), format!("must be in [0, 1), got {}", levels[i])));
    }
    if replications == 0 {
        return Err(Error::config("replications", "must be at least 1"));
    }
    let mut base = cfg.clone();
    base.solver = Solver::Hinge;
    base.cv = None;
    base.bound = None;
    base.validate()?;

    let jobs: Vec<(usize, u64)> = (0..levels.len())
        .flat_map(|l| (0..replications as u64).map(move |r| (l, r)))
        .collect();
    let errors: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(l, r)| {
            let mut c = base.clone();
            c.seed = cfg.seed.wrapping_add(r);
            if let DataSource::Simulate { noise, .. } = &mut c.data {
                *noise = if levels[l] == 0.0 {
                    NoiseSpec::NoNoise
                } else {
                    NoiseSpec::Switch { p: levels[l] }
                };
            }
            let data = prepare_data(&c)?;
            let truth = data.truth.as_ref().expect("simulated source");
            let hinge = fit_model(&c, &c.prior, c.lambda, &data.train)?;
            let logit_cfg = ExperimentConfig {
                solver: Solver::Logit,
                lambda: None,
                ..c.clone()
            };
            let logit = fit_model(&logit_cfg, &c.prior, None, &data.train)?;
            Ok((
                truth_error(&hinge.predictor()?, truth)?,
                truth_error(&logit.predictor()?, truth)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &level)| {
            let chunk = &errors[l * replications..(l + 1) * replications];
            let reps = replications as f64;
            SweepRow {
                level,
                hinge_error: chunk.iter().map(|e| e.0).sum::<f64>() / reps,
                logit_error: chunk.iter().map(|e| e.1).sum::<f64>() / reps,
            }
        })
        .collect())
}

/// CSV with a `level,hinge_error,logit_error` header.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
