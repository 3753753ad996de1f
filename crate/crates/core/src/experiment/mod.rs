//! Configured experiments: data preparation, fitting, cross-validation,
//! noise sweeps and JSON reports.

mod config;
mod cv;
mod run;
mod sweep;

pub use config::{
    BoundSettings, CvGrid, CvSettings, DataSource, ExperimentConfig, FileFormat, FitControls, Solver, DEFAULT_DENSITY,
    DEFAULT_EPSILON, DEFAULT_FOLDS, DEFAULT_TRAIN_FRACTION,
};
pub use cv::{cross_validate, CvCell, CvReport};
pub use run::{
    evaluate, fit_model, misclassification, prepare_data, report_schema, run, run_with_model, truth_error,
    ExperimentReport, FittedModel, Objective, PreparedData, RiskSummary, SavedModel, TraceSummary, AVB_TRACE_TOL,
    ELBO_TRACE_TOL,
};
pub use sweep::{sweep_noise, write_sweep_csv, SweepRow};
