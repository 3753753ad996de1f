use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{NoiseSpec, TruthKind};
use crate::error::{Error, Result};
use crate::hinge_vb::{HingeFitConfig, StepRule};
use crate::logit_vb::LogitFitConfig;
use crate::model::PriorConfig;
use crate::spectral::Init;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_DENSITY: f64 = 0.2;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    #[default]
    Hinge,
    Logit,
}

/// Optimizer controls shared by both solvers. Unset fields take the
/// solver's own defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FitControls {
    pub max_outer_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub init: Init,
    pub sigma_init: Option<f64>,
    pub v_init: Option<f64>,
    /// Hinge only.
    pub restarts: Option<usize>,
    /// Hinge only.
    pub step: Option<StepRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    /// `m1 m2 n` header followed by 1-based `i j y` lines.
    #[default]
    Text,
    /// Tab-separated `user item rating timestamp`.
    Movielens,
}

fn default_true() -> bool {
    true
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::NoNoise
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Simulated truth with noisy observations. Errors are measured against
    /// the sign of the truth over the whole matrix.
    Simulate {
        truth: TruthKind,
        rank: usize,
        m1: usize,
        m2: usize,
        #[serde(default = "default_noise")]
        noise: NoiseSpec,
        /// Number of observations. Mutually exclusive with `density`.
        #[serde(default)]
        n: Option<usize>,
        /// Observed fraction of the matrix, `0.2` when neither this nor `n`
        /// is given.
        #[serde(default)]
        density: Option<f64>,
        #[serde(default = "default_true")]
        with_replacement: bool,
    },
    /// A dataset file, with an optional separate test file.
    File {
        path: PathBuf,
        #[serde(default)]
        format: FileFormat,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    /// A MovieLens ratings file split into train and test at random.
    Movielens {
        path: PathBuf,
        #[serde(default)]
        train_fraction: Option<f64>,
        /// Seed of the split; the experiment seed when unset.
        #[serde(default)]
        split_seed: Option<u64>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Simulate {
            truth: TruthKind::TypeA,
            rank: 3,
            m1: 200,
            m2: 200,
            noise: NoiseSpec::NoNoise,
            n: None,
            density: None,
            with_replacement: true,
        }
    }
}

/// Hyperparameter grid. An axis left empty keeps the configured value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CvGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `lambda / n` where `n` is the size of the fold's training part.
    /// Unset means `[0.5, 1, 2]` for the hinge solver. Must stay unset or
    /// empty for the logit solver.
    pub lambda_over_n: Option<Vec<f64>>,
    pub k: Vec<usize>,
}

impl CvGrid {
    pub const DEFAULT_BETA: [f64; 3] = [0.1, 1.0, 10.0];
    pub const DEFAULT_LAMBDA_OVER_N: [f64; 3] = [0.5, 1.0, 2.0];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub grid: CvGrid,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: DEFAULT_FOLDS,
            grid: CvGrid {
                beta: CvGrid::DEFAULT_BETA.to_vec(),
                ..CvGrid::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub epsilon: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: Solver,
    pub prior: PriorConfig,
    /// Hinge only; `n` when unset.
    pub lambda: Option<f64>,
    pub fit: FitControls,
    pub data: DataSource,
    pub cv: Option<CvSettings>,
    /// Hinge only.
    pub bound: Option<BoundSettings>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be a finite number > 0, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<config>", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("prior.alpha", self.prior.alpha)?;
        positive("prior.beta", self.prior.beta)?;
        if self.prior.k == 0 {
            return Err(Error::config("prior.k", "must be at least 1"));
        }
        match (self.solver, self.lambda) {
            (Solver::Hinge, Some(l)) => positive("lambda", l)?,
            (Solver::Logit, Some(_)) => {
                return Err(Error::config("lambda", "only the hinge solver has a temperature"));
            }
            _ => {}
        }
        self.validate_fit()?;
        self.validate_data()?;
        if let Some(cv) = &self.cv {
            self.validate_cv(cv)?;
        }
        if let Some(b) = &self.bound {
            if self.solver == Solver::Logit {
                return Err(Error::config("bound", "the risk bound is only available for the hinge solver"));
            }
            if !(b.epsilon > 0.0 && b.epsilon < 1.0) {
                return Err(Error::config("bound.epsilon", format!("must be in (0, 1), got {}", b.epsilon)));
            }
        }
        Ok(())
    }

    fn validate_fit(&self) -> Result<()> {
        let f = &self.fit;
        if f.max_outer_iters == Some(0) {
            return Err(Error::config("fit.max_outer_iters", "must be at least 1"));
        }
        if let Some(t) = f.stop_tol {
            positive("fit.stop_tol", t)?;
        }
        if let Some(s) = f.sigma_init {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("fit.sigma_init", format!("must be >= 0, got {s}")));
            }
        }
        if let Some(v) = f.v_init {
            positive("fit.v_init", v)?;
        }
        if self.solver == Solver::Logit {
            if f.restarts.is_some() {
                return Err(Error::config("fit.restarts", "only used by the hinge solver"));
            }
            if f.step.is_some() {
                return Err(Error::config("fit.step", "only used by the hinge solver"));
            }
        }
        if f.restarts == Some(0) {
            return Err(Error::config("fit.restarts", "must be at least 1"));
        }
        if self.solver == Solver::Hinge {
            // reuse the solver's own checks for the step rule
            self.hinge_config(1.0)
                .validate()
                .map_err(|e| Error::config("fit.step", e.to_string()))?;
        }
        Ok(())
    }

    fn validate_data(&self) -> Result<()> {
        match &self.data {
            DataSource::Simulate {
                rank,
                m1,
                m2,
                noise,
                n,
                density,
                ..
            } => {
                if *m1 == 0 || *m2 == 0 {
                    return Err(Error::config("data.m1", format!("dimensions must be positive, got {m1}x{m2}")));
                }
                if *rank == 0 || rank > m1.min(m2) {
                    return Err(Error::config("data.rank", format!("must be in 1..={}", m1.min(m2))));
                }
                noise.validate().map_err(|e| Error::config("data.noise", e.to_string()))?;
                match (n, density) {
                    (Some(_), Some(_)) => {
                        return Err(Error::config("data.n", "give either `n` or `density`, not both"));
                    }
                    (Some(0), None) => return Err(Error::config("data.n", "must be at least 1")),
                    (None, Some(d)) if !(*d > 0.0 && *d <= 1.0) => {
                        return Err(Error::config("data.density", format!("must be in (0, 1], got {d}")));
                    }
                    _ => {}
                }
            }
            DataSource::File { .. } => {}
            DataSource::Movielens { train_fraction, .. } => {
                if let Some(f) = train_fraction {
                    if !(*f > 0.0 && *f < 1.0) {
                        return Err(Error::config(
                            "data.train_fraction",
                            format!("must be in (0, 1), got {f}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_cv(&self, cv: &CvSettings) -> Result<()> {
        if cv.folds < 2 {
            return Err(Error::config("cv.folds", format!("need at least 2 folds, got {}", cv.folds)));
        }
        let g = &cv.grid;
        for (i, &a) in g.alpha.iter().enumerate() {
            positive(&format!("cv.grid.alpha[{i}]"), a)?;
        }
        for (i, &b) in g.beta.iter().enumerate() {
            positive(&format!("cv.grid.beta[{i}]"), b)?;
        }
        if let Some(ls) = &g.lambda_over_n {
            if self.solver == Solver::Logit && !ls.is_empty() {
                return Err(Error::config("cv.grid.lambda_over_n", "only the hinge solver has a temperature"));
            }
            for (i, &l) in ls.iter().enumerate() {
                positive(&format!("cv.grid.lambda_over_n[{i}]"), l)?;
            }
        }
        if let Some(i) = g.k.iter().position(|&k| k == 0) {
            return Err(Error::config(format!("cv.grid.k[{i}]"), "must be at least 1"));
        }
        let lambda_axis = g.lambda_over_n.as_ref().map_or(self.solver == Solver::Hinge, |l| !l.is_empty());
        if g.alpha.is_empty() && g.beta.is_empty() && g.k.is_empty() && !lambda_axis {
            return Err(Error::config("cv.grid", "every axis is empty; nothing to tune"));
        }
        Ok(())
    }

    /// Number of observations a simulated source draws.
    pub fn simulated_n(&self) -> Option<usize> {
        match &self.data {
            DataSource::Simulate {
                m1, m2, n, density, ..
            } => Some(n.unwrap_or_else(|| {
                let d = density.unwrap_or(DEFAULT_DENSITY);
                ((d * (*m1 as f64) * (*m2 as f64)).floor() as usize).max(1)
            })),
            _ => None,
        }
    }

    pub fn hinge_config(&self, lambda: f64) -> HingeFitConfig {
        let d = HingeFitConfig::default();
        HingeFitConfig {
            lambda,
            max_outer_iters: self.fit.max_outer_iters.unwrap_or(d.max_outer_iters),
            stop_tol: self.fit.stop_tol.unwrap_or(d.stop_tol),
            step: self.fit.step.unwrap_or(d.step),
            init: self.fit.init,
            sigma_init: self.fit.sigma_init,
            v_init: self.fit.v_init,
            seed: self.seed,
            restarts: self.fit.restarts.unwrap_or(d.restarts),
        }
    }

    pub fn logit_config(&self) -> LogitFitConfig {
        let d = LogitFitConfig::default();
        LogitFitConfig {
            max_outer_iters: self.fit.max_outer_iters.unwrap_or(d.max_outer_iters),
            stop_tol: self.fit.stop_tol.unwrap_or(d.stop_tol),
            init: self.fit.init,
            sigma_init: self.fit.sigma_init,
            v_init: self.fit.v_init,
            seed: self.seed,
        }
    }

    /// Copy with every defaulted optimizer field written out.
    pub(crate) fn resolved(&self, lambda: Option<f64>) -> ExperimentConfig {
        let mut out = self.clone();
        match self.solver {
            Solver::Hinge => {
                let h = self.hinge_config(lambda.unwrap_or(1.0));
                out.lambda = lambda;
                out.fit.max_outer_iters = Some(h.max_outer_iters);
                out.fit.stop_tol = Some(h.stop_tol);
                out.fit.restarts = Some(h.restarts);
                out.fit.step = Some(h.step);
            }
            Solver::Logit => {
                let l = self.logit_config();
                out.fit.max_outer_iters = Some(l.max_outer_iters);
                out.fit.stop_tol = Some(l.stop_tol);
            }
        }
        if let DataSource::Simulate { n, density, .. } = &mut out.data {
            if n.is_none() && density.is_none() {
                *density = Some(DEFAULT_DENSITY);
            }
        }
        if let DataSource::Movielens {
            train_fraction,
            split_seed,
            ..
        } = &mut out.data
        {
            train_fraction.get_or_insert(DEFAULT_TRAIN_FRACTION);
            split_seed.get_or_insert(self.seed);
        }
        if let Some(cv) = &mut out.cv {
            if cv.grid.lambda_over_n.is_none() && self.solver == Solver::Hinge {
                cv.grid.lambda_over_n = Some(CvGrid::DEFAULT_LAMBDA_OVER_N.to_vec());
            }
        }
        out
    }
}
