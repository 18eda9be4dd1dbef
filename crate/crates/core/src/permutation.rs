use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Bijection on `0..n`, stored as the row → column assignment of a binary
/// permutation matrix: `assignment[i] = j` means entry `(i, j)` is one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermutationMatrix {
    assignment: Vec<usize>,
}

impl PermutationMatrix {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let n = assignment.len();
        let mut seen = vec![false; n];
        for (i, &j) in assignment.iter().enumerate() {
            if j >= n {
                return Err(Error::validation(format!(
                    "permutation maps row {i} to column {j}, outside 0..{n}"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::validation(format!(
                    "permutation is not a bijection: column {j} used twice"
                )));
            }
        }
        Ok(PermutationMatrix { assignment })
    }

    pub fn identity(n: usize) -> Self {
        PermutationMatrix {
            assignment: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn apply(&self, row: usize) -> usize {
        self.assignment[row]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.n()];
        for (i, &j) in self.assignment.iter().enumerate() {
            inv[j] = i;
        }
        PermutationMatrix { assignment: inv }
    }

    /// Matrix product `self · other`; as maps, apply `self` first.
    pub fn then(&self, other: &PermutationMatrix) -> Self {
        debug_assert_eq!(self.n(), other.n());
        PermutationMatrix {
            assignment: self.assignment.iter().map(|&k| other.apply(k)).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.assignment.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Sum of `score[(i, assignment[i])]`.
    pub fn score(&self, score: &Matrix) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| score[(i, j)])
            .sum()
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.assignment.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// Reads a dense 0/1 matrix; every row and column must sum to exactly one.
    pub fn from_dense(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("permutation matrix must be square"));
        }
        let mut assignment = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.iter().sum::<f64>() != 1.0 {
                return Err(Error::validation(format!("row {i} is not a unit vector")));
            }
            assignment.push(row.iter().position(|&v| v == 1.0).unwrap());
        }
        Self::new(assignment)
    }
}

impl TryFrom<Vec<usize>> for PermutationMatrix {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PermutationMatrix> for Vec<usize> {
    fn from(p: PermutationMatrix) -> Vec<usize> {
        p.assignment
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(n: usize) -> impl Strategy<Value = PermutationMatrix> {
        Just((0..n).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(|v| PermutationMatrix::new(v).unwrap())
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(PermutationMatrix::new(vec![0, 0]).is_err());
        assert!(PermutationMatrix::new(vec![0, 2]).is_err());
        assert!(serde_json::from_str::<PermutationMatrix>("[1,1]").is_err());
    }

    #[test]
    fn dense_rows_and_columns_sum_to_one() {
        let p = PermutationMatrix::new(vec![2, 0, 1]).unwrap();
        let d = p.to_dense();
        assert!(d.row_sums().iter().all(|&s| s == 1.0));
        assert!(d.col_sums().iter().all(|&s| s == 1.0));
        assert_eq!(PermutationMatrix::from_dense(&d).unwrap(), p);
    }

    proptest! {
        #[test]
        fn composition_is_matrix_product((a, b) in (1usize..8).prop_flat_map(|n| (perm(n), perm(n)))) {
            let dense = a.to_dense().matmul(&b.to_dense()).unwrap();
            prop_assert_eq!(a.then(&b).to_dense(), dense);
            prop_assert!(a.then(&a.inverse()).is_identity());
        }
    }
}
