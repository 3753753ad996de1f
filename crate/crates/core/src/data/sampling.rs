use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::truth::GroundTruth;
use crate::error::{Error, Result};
use crate::model::{sigmoid, sign_label, Dataset, ObservedEntry};

/// Label noise applied on top of `sign(M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    NoNoise,
    /// Each label is flipped independently with probability `p`.
    Switch { p: f64 },
    /// `+1` with probability `sigmoid(M)`.
    Logistic,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if let NoiseSpec::Switch { p } = self {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::invalid(format!("flip probability must be in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    fn label<R: Rng + ?Sized>(&self, m: f64, rng: &mut R) -> i8 {
        match *self {
            NoiseSpec::NoNoise => sign_label(m),
            NoiseSpec::Switch { p } => {
                let clean = sign_label(m);
                if rng.random_bool(p) {
                    -clean
                } else {
                    clean
                }
            }
            NoiseSpec::Logistic => {
                if rng.random::<f64>() < sigmoid(m) {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

/// Noisy observations together with the noiseless labels `sign(M)` at the
/// same positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub data: Dataset,
    pub clean: Dataset,
}

/// Draws `n` positions uniformly over the matrix and labels them.
///
/// Positions are independent (repeats allowed) unless `with_replacement` is
/// false, in which case `n` distinct positions are drawn.
pub fn sample_observations(
    truth: &GroundTruth,
    noise: NoiseSpec,
    n: usize,
    with_replacement: bool,
    seed: u64,
) -> Result<Observations> {
    noise.validate()?;
    let (m1, m2) = truth.dims();
    if m1 == 0 || m2 == 0 {
        return Err(Error::invalid("ground truth has a zero dimension"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    let cells = m1 * m2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<usize> = if with_replacement {
        (0..n).map(|_| rng.random_range(0..cells)).collect()
    } else {
        if n > cells {
            return Err(Error::invalid(format!("cannot draw {n} distinct entries from {cells}")));
        }
        index::sample(&mut rng, cells, n).into_vec()
    };
    let mut noisy = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    for p in positions {
        let (i, j) = (p / m2, p % m2);
        let m = truth.matrix.value(i, j);
        noisy.push(ObservedEntry::new(i, j, noise.label(m, &mut rng)));
        clean.push(ObservedEntry::new(i, j, sign_label(m)));
    }
    Ok(Observations {
        data: Dataset::new(m1, m2, noisy)?,
        clean: Dataset::new(m1, m2, clean)?,
    })
}

/// Uniform random partition into `train_count` training and the remaining
/// test entries.
pub fn split(data: &Dataset, train_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_count == 0 || train_count >= data.len() {
        return Err(Error::invalid(format!(
            "train count {train_count} must be in 1..{}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let (train, test) = order.split_at(train_count);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// `k` disjoint folds covering all entries, in random order.
pub fn folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("need 2 <= folds <= {n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut out = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % k].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}
