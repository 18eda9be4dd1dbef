//! Linear assignment by the Hungarian method (shortest augmenting paths
//! with dual potentials), with a deterministic tie-break.

use super::Matrix;
use crate::error::{Error, Result};
use crate::permutation::PermutationMatrix;

/// Permutation maximizing the summed score.
///
/// Among all maximizers the lexicographically smallest assignment is
/// returned. Near-ties are resolved with a tolerance of `1e-12` relative to
/// the matrix scale.
pub fn hungarian(score: &Matrix) -> Result<PermutationMatrix> {
    if !score.is_square() {
        return Err(Error::shape(format!(
            "hungarian needs a square matrix, got {}x{}",
            score.rows(),
            score.cols()
        )));
    }
    if !score.is_finite() {
        return Err(Error::contract("hungarian needs finite scores"));
    }
    let n = score.rows();
    if n == 0 {
        return Ok(PermutationMatrix::identity(0));
    }
    let max = score.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cost = score.map(|s| max - s);
    let tol = 1e-12 * (1.0 + n as f64 * score.max_abs());

    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..n).collect();
    let mut best = min_cost_assignment(&cost, &rows, &cols);
    let optimum = assignment_cost(&cost, &best);

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion.
    let mut fixed_cost = 0.0;
    let mut free_cols: Vec<usize> = cols;
    for r in 0..n {
        let current = best[r];
        let sub_rows: Vec<usize> = ((r + 1)..n).collect();
        for &c in free_cols.iter().filter(|&&c| c < current) {
            let sub_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let sub = min_cost_assignment(&cost, &sub_rows, &sub_cols);
            let total = fixed_cost
                + cost[(r, c)]
                + sub_rows
                    .iter()
                    .zip(&sub)
                    .map(|(&i, &j)| cost[(i, j)])
                    .sum::<f64>();
            if total <= optimum + tol {
                best[r] = c;
                for (&i, &j) in sub_rows.iter().zip(&sub) {
                    best[i] = j;
                }
                break;
            }
        }
        fixed_cost += cost[(r, best[r])];
        free_cols.retain(|&x| x != best[r]);
    }
    PermutationMatrix::new(best)
}

fn assignment_cost(cost: &Matrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Minimum-cost perfect matching between `rows` and `cols` (equal length)
/// of `cost`. Returns, for each entry of `rows`, the matched column index
/// (an element of `cols`). With `rows` covering `0..n` the result is
/// indexed by row.
fn min_cost_assignment(cost: &Matrix, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    if n == 0 {
        return Vec::new();
    }
    let a = |i: usize, j: usize| cost[(rows[i - 1], cols[j - 1])];

    // 1-indexed potentials; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = cols[j - 1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search in lexicographic order, keeping the first strict
    /// maximum.
    fn brute_force(score: &Matrix) -> (Vec<usize>, f64) {
        fn rec(
            score: &Matrix,
            row: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            acc: f64,
            best: &mut (Vec<usize>, f64),
        ) {
            let n = score.rows();
            if row == n {
                if acc > best.1 {
                    *best = (cur.clone(), acc);
                }
                return;
            }
            for c in 0..n {
                if !used[c] {
                    used[c] = true;
                    cur.push(c);
                    rec(score, row + 1, used, cur, acc + score[(row, c)], best);
                    cur.pop();
                    used[c] = false;
                }
            }
        }
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        rec(score, 0, &mut vec![false; score.rows()], &mut Vec::new(), 0.0, &mut best);
        best
    }

    #[test]
    fn identity_dominant() {
        let m = Matrix::from_fn(3, 3, |i, j| if i == j { 10.0 } else { 0.0 });
        assert!(hungarian(&m).unwrap().is_identity());
    }

    #[test]
    fn anti_diagonal() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&m).unwrap().assignment(), &[1, 0]);
    }

    #[test]
    fn three_by_three_against_enumeration() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 1.0], [0.0, 1.0, 5.0]]).unwrap();
        let (bf, value) = brute_force(&m);
        assert_eq!(bf, vec![0, 1, 2]);
        assert_eq!(value, 10.0);
        let p = hungarian(&m).unwrap();
        assert_eq!(p.assignment(), &[0, 1, 2]);
        assert_eq!(p.score(&m), 10.0);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = Matrix::filled(4, 4, 1.0);
        assert!(hungarian(&m).unwrap().is_identity());
        // two optimal assignments: [1,0,2] and [0,1,2] -> the smaller wins
        let m = Matrix::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(hungarian(&m).unwrap().assignment(), &[0, 1, 2]);
        let m = Matrix::from_rows(&[[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&m).unwrap().assignment(), &[1, 2, 0]);
    }

    #[test]
    fn integer_ties_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let m = Matrix::from_fn(n, n, |_, _| rng.random_range(0..3) as f64);
            assert_eq!(hungarian(&m).unwrap().assignment(), brute_force(&m).0.as_slice());
        }
    }

    #[test]
    fn non_square_is_an_error() {
        assert!(matches!(hungarian(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }
}
