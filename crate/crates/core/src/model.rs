//! Observations, predictor matrices and empirical risks.
//!
//! Indices are 0-based in memory. The text formats in [`crate::data`] are
//! 1-based and convert on read/write.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed entry: a position in the matrix and its ±1 label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedEntry {
    pub row: usize,
    pub col: usize,
    pub label: i8,
}

impl ObservedEntry {
    pub fn new(row: usize, col: usize, label: i8) -> Self {
        ObservedEntry { row, col, label }
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.label as f64
    }
}

/// An immutable set of observations with per-row and per-column index lists.
///
/// Duplicate positions are allowed: observations are i.i.d. draws and the
/// same entry may be sampled more than once.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    m1: usize,
    m2: usize,
    entries: Vec<ObservedEntry>,
    row_index: Vec<Vec<usize>>,
    col_index: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(m1: usize, m2: usize, entries: Vec<ObservedEntry>) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        let mut row_index = vec![Vec::new(); m1];
        let mut col_index = vec![Vec::new(); m2];
        for (pos, e) in entries.iter().enumerate() {
            if e.row >= m1 || e.col >= m2 {
                return Err(Error::IndexOutOfRange(format!(
                    "entry {pos} at ({}, {}) outside {m1}x{m2}",
                    e.row + 1,
                    e.col + 1
                )));
            }
            if e.label != 1 && e.label != -1 {
                return Err(Error::invalid(format!(
                    "entry {pos} has label {}, expected -1 or +1",
                    e.label
                )));
            }
            row_index[e.row].push(pos);
            col_index[e.col].push(pos);
        }
        Ok(Dataset {
            m1,
            m2,
            entries,
            row_index,
            col_index,
        })
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ObservedEntry] {
        &self.entries
    }

    /// Positions `l` with `entries[l].row == i`.
    pub fn row_entries(&self, i: usize) -> &[usize] {
        &self.row_index[i]
    }

    /// Positions `l` with `entries[l].col == j`.
    pub fn col_entries(&self, j: usize) -> &[usize] {
        &self.col_index[j]
    }

    /// A new dataset made of the entries at `positions`, same dimensions.
    pub fn subset(&self, positions: &[usize]) -> Result<Dataset> {
        let entries = positions
            .iter()
            .map(|&p| {
                self.entries
                    .get(p)
                    .copied()
                    .ok_or_else(|| Error::IndexOutOfRange(format!("position {p}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.m1, self.m2, entries)
    }
}

/// Dense row-major matrix used for factor means and variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(FactorMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for k in 0..cols {
                data.push(f(i, k));
            }
        }
        FactorMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.cols + k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column `k` copied out.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, k)).collect()
    }

    /// Reorders columns so that new column `c` is old column `perm[c]`.
    pub fn permute_columns(&self, perm: &[usize]) -> FactorMatrix {
        FactorMatrix::from_fn(self.rows, self.cols, |i, c| self.get(i, perm[c]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A real-valued predictor on `[m1] x [m2]`, either dense or as a factor pair
/// `L R^T`.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorMatrix {
    Dense {
        m1: usize,
        m2: usize,
        values: Vec<f64>,
    },
    Factored {
        left: FactorMatrix,
        right: FactorMatrix,
    },
}

impl PredictorMatrix {
    pub fn dense(m1: usize, m2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m1 * m2 {
            return Err(Error::Dimension(format!(
                "{} values for a {m1}x{m2} predictor",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("predictor has non-finite entries"));
        }
        Ok(PredictorMatrix::Dense { m1, m2, values })
    }

    pub fn factored(left: FactorMatrix, right: FactorMatrix) -> Result<Self> {
        if left.cols() != right.cols() {
            return Err(Error::Dimension(format!(
                "factor ranks differ: {} vs {}",
                left.cols(),
                right.cols()
            )));
        }
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::invalid("factors have non-finite entries"));
        }
        Ok(PredictorMatrix::Factored { left, right })
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            PredictorMatrix::Dense { m1, m2, .. } => (*m1, *m2),
            PredictorMatrix::Factored { left, right } => (left.rows(), right.rows()),
        }
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self {
            PredictorMatrix::Dense { m2, values, .. } => values[i * m2 + j],
            PredictorMatrix::Factored { left, right } => dot(left.row(i), right.row(j)),
        }
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> PredictorMatrix {
        match self {
            PredictorMatrix::Dense { m1, m2, values } => PredictorMatrix::Dense {
                m1: *m1,
                m2: *m2,
                values: values.iter().map(|v| v * c).collect(),
            },
            PredictorMatrix::Factored { left, right } => {
                let mut left = left.clone();
                left.as_mut_slice().iter_mut().for_each(|v| *v *= c);
                PredictorMatrix::Factored {
                    left,
                    right: right.clone(),
                }
            }
        }
    }

    /// Label predicted at `(i, j)`; zero is resolved to +1.
    #[inline]
    pub fn predict(&self, i: usize, j: usize) -> i8 {
        sign_label(self.value(i, j))
    }
}

/// Tie-broken sign: `+1` for `x >= 0`, `-1` otherwise.
#[inline]
pub fn sign_label(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

fn check_dims(m: &PredictorMatrix, data: &Dataset) -> Result<()> {
    if m.dims() != (data.m1(), data.m2()) {
        let (a, b) = m.dims();
        return Err(Error::Dimension(format!(
            "predictor is {a}x{b}, dataset is {}x{}",
            data.m1(),
            data.m2()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn mean_loss(m: &PredictorMatrix, data: &Dataset, loss: impl Fn(f64) -> f64) -> Result<f64> {
    check_dims(m, data)?;
    let total: f64 = data
        .entries()
        .iter()
        .map(|e| loss(e.y() * m.value(e.row, e.col)))
        .sum();
    Ok(total / data.len() as f64)
}

/// Fraction of observations with `Y * M_X < 0`. A zero prediction is not an
/// error.
pub fn zero_one_risk(m: &PredictorMatrix, data: &Dataset) -> Result<f64> {
    mean_loss(m, data, |margin| if margin < 0.0 { 1.0 } else { 0.0 })
}

/// Empirical hinge risk `(1/n) sum (1 - Y M_X)_+`.
pub fn hinge_risk(m: &PredictorMatrix, data: &Dataset) -> Result<f64> {
    mean_loss(m, data, hinge)
}

/// Empirical logistic risk `(1/n) sum log(1 + exp(-Y M_X))`.
pub fn logistic_risk(m: &PredictorMatrix, data: &Dataset) -> Result<f64> {
    mean_loss(m, data, |margin| softplus(-margin))
}

#[inline]
pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(x)`, stable for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Sign of `(L R^T)` at each query position, with sign(0) = +1.
pub fn predict_labels(
    left: &FactorMatrix,
    right: &FactorMatrix,
    queries: &[(usize, usize)],
) -> Result<Vec<i8>> {
    if left.cols() != right.cols() {
        return Err(Error::Dimension(format!(
            "factor ranks differ: {} vs {}",
            left.cols(),
            right.cols()
        )));
    }
    queries
        .iter()
        .map(|&(i, j)| {
            if i >= left.rows() || j >= right.rows() {
                return Err(Error::IndexOutOfRange(format!(
                    "query ({}, {}) outside {}x{}",
                    i + 1,
                    j + 1,
                    left.rows(),
                    right.rows()
                )));
            }
            Ok(sign_label(dot(left.row(i), right.row(j))))
        })
        .collect()
}

/// Prior family on the factor scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PriorFamily {
    Gamma,
    InvGamma,
}

/// Hierarchical prior: `gamma_k ~ family(alpha, beta)` and rows of `L`, `R`
/// are `N(0, diag(gamma))`, with `k` factor columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub family: PriorFamily,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            family: PriorFamily::InvGamma,
            alpha: 1.0,
            beta: 1.0,
            k: 10,
        }
    }
}

impl PriorConfig {
    pub fn new(family: PriorFamily, alpha: f64, beta: f64, k: usize) -> Result<Self> {
        let p = PriorConfig {
            family,
            alpha,
            beta,
            k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(label: i8) -> Dataset {
        Dataset::new(1, 1, vec![ObservedEntry::new(0, 0, label)]).unwrap()
    }

    fn scalar(v: f64) -> PredictorMatrix {
        PredictorMatrix::dense(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_one_examples() {
        assert_eq!(zero_one_risk(&scalar(2.0), &single(1)).unwrap(), 0.0);
        assert_eq!(zero_one_risk(&scalar(2.0), &single(-1)).unwrap(), 1.0);
        // products -3 and +1
        let d = Dataset::new(
            1,
            2,
            vec![ObservedEntry::new(0, 0, -1), ObservedEntry::new(0, 1, 1)],
        )
        .unwrap();
        let m = PredictorMatrix::dense(1, 2, vec![3.0, 1.0]).unwrap();
        assert_eq!(zero_one_risk(&m, &d).unwrap(), 0.5);
        // zero prediction counts as correct
        assert_eq!(zero_one_risk(&scalar(0.0), &single(-1)).unwrap(), 0.0);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_risk(&scalar(2.0), &single(1)).unwrap(), 0.0);
        assert_eq!(hinge_risk(&scalar(0.0), &single(1)).unwrap(), 1.0);
        let d = Dataset::new(
            1,
            2,
            vec![ObservedEntry::new(0, 0, 1), ObservedEntry::new(0, 1, -1)],
        )
        .unwrap();
        let m = PredictorMatrix::dense(1, 2, vec![0.5, -2.0]).unwrap();
        assert_eq!(hinge_risk(&m, &d).unwrap(), 0.25);
    }

    #[test]
    fn logistic_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((logistic_risk(&scalar(0.0), &single(1)).unwrap() - ln2).abs() < 1e-15);
        let big = logistic_risk(&scalar(-1000.0), &single(1)).unwrap();
        assert!((big - 1000.0).abs() < 1e-9, "{big}");
        let d = Dataset::new(
            1,
            2,
            vec![ObservedEntry::new(0, 0, 1), ObservedEntry::new(0, 1, -1)],
        )
        .unwrap();
        let m = PredictorMatrix::dense(1, 2, vec![0.0, 0.0]).unwrap();
        assert!((logistic_risk(&m, &d).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn predict_label_examples() {
        let l = FactorMatrix::from_vec(1, 1, vec![1.6]).unwrap();
        let r = FactorMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert_eq!(predict_labels(&l, &r, &[(0, 0)]).unwrap(), vec![1]);
        let r = FactorMatrix::from_vec(1, 1, vec![-0.0625]).unwrap();
        assert_eq!(predict_labels(&l, &r, &[(0, 0)]).unwrap(), vec![-1]);
        let r = FactorMatrix::from_vec(1, 1, vec![0.0]).unwrap();
        assert_eq!(predict_labels(&l, &r, &[(0, 0)]).unwrap(), vec![1]);
        assert!(matches!(
            predict_labels(&l, &r, &[(1, 0)]),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn risk_errors() {
        let empty = Dataset::new(1, 1, vec![]).unwrap();
        assert!(matches!(
            hinge_risk(&scalar(1.0), &empty),
            Err(Error::EmptyDataset)
        ));
        let m = PredictorMatrix::dense(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            zero_one_risk(&m, &single(1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dataset_indices_partition_entries() {
        let entries = vec![
            ObservedEntry::new(0, 1, 1),
            ObservedEntry::new(2, 1, -1),
            ObservedEntry::new(0, 1, -1),
            ObservedEntry::new(1, 0, 1),
        ];
        let d = Dataset::new(3, 2, entries).unwrap();
        assert_eq!(d.row_entries(0), &[0, 2]);
        assert_eq!(d.row_entries(1), &[3]);
        assert_eq!(d.col_entries(1), &[0, 1, 2]);
        assert!(Dataset::new(2, 2, vec![ObservedEntry::new(0, 0, 0)]).is_err());
        assert!(Dataset::new(2, 2, vec![ObservedEntry::new(2, 0, 1)]).is_err());
    }
}
