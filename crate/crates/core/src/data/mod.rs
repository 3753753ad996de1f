//! Simulated ground truths, label noise, observation sampling and file
//! formats.
//!
//! Every generator takes a `u64` seed and draws from its own ChaCha stream,
//! so runs are reproducible and independent replications can be scheduled
//! in any order.

mod io;
mod sampling;
mod truth;

pub use io::{load_dataset, parse_movielens, read_dataset, read_movielens, save_dataset, write_dataset};
pub use sampling::{folds, sample_observations, split, NoiseSpec, Observations};
pub use truth::{gen_type_a, gen_type_b, numerical_rank, GroundTruth, TruthKind};
