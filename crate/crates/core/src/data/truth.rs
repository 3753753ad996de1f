use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictorMatrix;

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    /// Entries in `{-1, +1}` with exactly `r` independent columns.
    TypeA,
    /// `U V^T` with standard normal factors.
    TypeB,
}

/// A simulated ground-truth matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub matrix: PredictorMatrix,
    pub rank: usize,
    pub kind: TruthKind,
}

impl GroundTruth {
    pub fn dims(&self) -> (usize, usize) {
        self.matrix.dims()
    }

    pub fn generate(kind: TruthKind, m1: usize, m2: usize, r: usize, seed: u64) -> Result<Self> {
        match kind {
            TruthKind::TypeA => gen_type_a(m1, m2, r, seed),
            TruthKind::TypeB => gen_type_b(m1, m2, r, seed),
        }
    }
}

fn check_dims(m1: usize, m2: usize, r: usize) -> Result<()> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::invalid(format!("matrix dimensions must be positive, got {m1}x{m2}")));
    }
    if r == 0 || r > m1.min(m2) {
        return Err(Error::invalid(format!("rank {r} is not in 1..={}", m1.min(m2))));
    }
    Ok(())
}

/// Numerical rank from the singular values, relative to the largest.
pub fn numerical_rank(values: &[f64], rows: usize, cols: usize) -> usize {
    let m = DMatrix::from_row_slice(rows, cols, values);
    let sv = m.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    let tol = top * rows.max(cols) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Sign matrix whose first `r` columns are independent random sign vectors
/// and whose remaining columns are signed copies of them.
pub fn gen_type_a(m1: usize, m2: usize, r: usize, seed: u64) -> Result<GroundTruth> {
    check_dims(m1, m2, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs = [-1.0, 1.0];
    let mut basis = Vec::new();
    for attempt in 0.. {
        if attempt == MAX_REDRAWS {
            return Err(Error::Data(format!(
                "no {r} independent sign columns of length {m1} after {MAX_REDRAWS} draws"
            )));
        }
        // column-major block of r columns, transposed into rows for the rank check
        let cols: Vec<f64> = (0..m1 * r).map(|_| *signs.choose(&mut rng).unwrap()).collect();
        if numerical_rank(&cols, r, m1) == r {
            basis = cols;
            break;
        }
    }
    let mut values = vec![0.0; m1 * m2];
    for j in 0..m2 {
        let (source, sign) = if j < r {
            (j, 1.0)
        } else {
            (rng.random_range(0..r), *signs.choose(&mut rng).unwrap())
        };
        for i in 0..m1 {
            values[i * m2 + j] = sign * basis[source * m1 + i];
        }
    }
    let rank = numerical_rank(&values, m1, m2);
    if rank != r {
        return Err(Error::Data(format!("type A construction produced rank {rank}, expected {r}")));
    }
    Ok(GroundTruth {
        matrix: PredictorMatrix::dense(m1, m2, values)?,
        rank: r,
        kind: TruthKind::TypeA,
    })
}

/// `U V^T` with `U` (m1 x r) and `V` (m2 x r) standard normal.
pub fn gen_type_b(m1: usize, m2: usize, r: usize, seed: u64) -> Result<GroundTruth> {
    check_dims(m1, m2, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..m1 * r).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..m2 * r).map(|_| rng.sample(StandardNormal)).collect();
    let mut values = vec![0.0; m1 * m2];
    for i in 0..m1 {
        for j in 0..m2 {
            values[i * m2 + j] = (0..r).map(|k| u[i * r + k] * v[j * r + k]).sum();
        }
    }
    Ok(GroundTruth {
        matrix: PredictorMatrix::dense(m1, m2, values)?,
        rank: r,
        kind: TruthKind::TypeB,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(gt: &GroundTruth) -> Vec<f64> {
        let (m1, m2) = gt.dims();
        (0..m1)
            .flat_map(|i| (0..m2).map(move |j| (i, j)))
            .map(|(i, j)| gt.matrix.value(i, j))
            .collect()
    }

    #[test]
    fn type_a_rank_one_columns_are_signed_copies() {
        let gt = gen_type_a(7, 9, 1, 3).unwrap();
        for j in 0..9 {
            let s = gt.matrix.value(0, j) * gt.matrix.value(0, 0);
            for i in 0..7 {
                assert_eq!(gt.matrix.value(i, j), s * gt.matrix.value(i, 0));
            }
        }
    }

    #[test]
    fn type_a_entries_are_signs_and_rank_is_exact() {
        let gt = gen_type_a(50, 50, 3, 11).unwrap();
        assert!(values(&gt).iter().all(|v| *v == 1.0 || *v == -1.0));
        assert_eq!(numerical_rank(&values(&gt), 50, 50), 3);
    }

    #[test]
    fn type_a_impossible_rank_fails() {
        assert!(gen_type_a(2, 5, 3, 0).is_err());
        assert!(gen_type_a(1, 4, 1, 0).is_ok());
    }

    #[test]
    fn type_b_rank_one_minors_vanish() {
        let gt = gen_type_b(6, 5, 1, 2).unwrap();
        let m = &gt.matrix;
        for i in 0..5 {
            for j in 0..4 {
                let minor = m.value(i, j) * m.value(i + 1, j + 1) - m.value(i, j + 1) * m.value(i + 1, j);
                let size = (m.value(i, j) * m.value(i + 1, j + 1)).abs().max(1e-300);
                assert!(minor.abs() <= 1e-10 * size.max(1.0));
            }
        }
    }

    #[test]
    fn type_b_is_reproducible_and_has_variance_r() {
        assert_eq!(gen_type_b(30, 20, 3, 5).unwrap(), gen_type_b(30, 20, 3, 5).unwrap());
        let mut total = 0.0;
        for seed in 0..5 {
            let v = values(&gen_type_b(500, 500, 3, seed).unwrap());
            total += v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        }
        let var = total / 5.0;
        assert!((var - 3.0).abs() < 0.3, "{var}");
    }

    #[test]
    fn bad_rank_is_rejected() {
        assert!(gen_type_b(3, 3, 4, 0).is_err());
        assert!(gen_type_a(3, 3, 0, 0).is_err());
    }
}
