//! Spectral multi-graph matching: joint affinity assembly, top-n
//! eigenspace factorization, Hungarian projection and pivot-based cycle
//! consistency.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{hungarian, sym_eig, Matrix};
use crate::permutation::PermutationMatrix;

/// Symmetric `nm × nm` matrix of pairwise soft matchings with identity
/// diagonal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAffinity {
    m: usize,
    n: usize,
    matrix: Matrix,
}

impl JointAffinity {
    /// Checks every invariant: exact symmetry, identity diagonal blocks and
    /// off-diagonal entries in `[0, 1]`.
    pub fn new(m: usize, n: usize, matrix: Matrix) -> Result<Self> {
        check_sizes(m, n)?;
        if matrix.shape() != (m * n, m * n) {
            return Err(Error::shape(format!(
                "joint matrix for m={m}, n={n} must be {0}x{0}, got {1}x{2}",
                m * n,
                matrix.rows(),
                matrix.cols()
            )));
        }
        for p in 0..m * n {
            for q in 0..m * n {
                let v = matrix[(p, q)];
                if v != matrix[(q, p)] {
                    return Err(Error::validation(format!(
                        "joint matrix is not symmetric at ({p}, {q})"
                    )));
                }
                if p / n == q / n {
                    let want = if p == q { 1.0 } else { 0.0 };
                    if v != want {
                        return Err(Error::validation(format!(
                            "diagonal block {} is not the identity at ({p}, {q})",
                            p / n
                        )));
                    }
                } else if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "off-diagonal entry ({p}, {q}) = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(JointAffinity { m, n, matrix })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix {
        self.matrix.block(i * self.n, j * self.n, self.n, self.n)
    }
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    if m < 2 || n == 0 {
        return Err(Error::validation(format!(
            "matching needs m >= 2 graphs of n >= 1 nodes, got m={m}, n={n}"
        )));
    }
    Ok(())
}

/// Builds the joint matrix from the upper-triangular blocks `(i, j)`,
/// `i < j`; lower blocks are their transposes. Blocks are expected to be
/// (near) doubly stochastic; only the entry range is enforced, since a
/// Sinkhorn run stopped at its iteration cap is not exactly normalized.
pub fn assemble_joint(
    blocks: &BTreeMap<(usize, usize), Matrix>,
    m: usize,
    n: usize,
) -> Result<JointAffinity> {
    check_sizes(m, n)?;
    let mut joint = Matrix::zeros(m * n, m * n);
    for i in 0..m {
        joint.set_block(i * n, i * n, &Matrix::identity(n));
        for j in i + 1..m {
            let b = blocks
                .get(&(i, j))
                .ok_or_else(|| Error::validation(format!("missing affinity block ({i}, {j})")))?;
            if b.shape() != (n, n) {
                return Err(Error::shape(format!(
                    "block ({i}, {j}) is {}x{}, expected {n}x{n}",
                    b.rows(),
                    b.cols()
                )));
            }
            if let Some(v) = b.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::validation(format!(
                    "block ({i}, {j}) has entry {v} outside [0, 1]"
                )));
            }
            joint.set_block(i * n, j * n, b);
            joint.set_block(j * n, i * n, &b.transpose());
        }
    }
    if let Some(&(i, j)) = blocks.keys().find(|&&(i, j)| i >= j || j >= m) {
        return Err(Error::validation(format!(
            "unexpected block ({i}, {j}) for m={m}"
        )));
    }
    JointAffinity::new(m, n, joint)
}

/// `Û = U·Σ^{1/2}` over the top-`n` eigenpairs, negative eigenvalues
/// clamped to zero. Rows `i·n .. (i+1)·n` form the block of graph `i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralFactor {
    pub m: usize,
    pub n: usize,
    /// Top-`n` eigenvalues after clamping, descending.
    pub sigma: Vec<f64>,
    pub u_hat: Matrix,
}

impl SpectralFactor {
    pub fn block(&self, i: usize) -> Matrix {
        self.u_hat.block(i * self.n, 0, self.n, self.n)
    }

    /// `Û·Ûᵀ`, the rank-`n` approximation of the factored matrix.
    pub fn reconstruct(&self) -> Matrix {
        self.u_hat
            .matmul_t(&self.u_hat)
            .expect("factor is nm x n by construction")
    }

    /// Factors any symmetric `nm × nm` matrix; [`spectral_factor`] is the
    /// checked entry point for joint affinities.
    pub fn from_symmetric(m: usize, n: usize, matrix: &Matrix) -> Result<Self> {
        check_sizes(m, n)?;
        if matrix.shape() != (m * n, m * n) {
            return Err(Error::shape(format!(
                "expected a {0}x{0} matrix, got {1}x{2}",
                m * n,
                matrix.rows(),
                matrix.cols()
            )));
        }
        let eig = sym_eig(matrix)?;
        let sigma: Vec<f64> = eig.values[..n].iter().map(|&v| v.max(0.0)).collect();
        let roots: Vec<f64> = sigma.iter().map(|v| v.sqrt()).collect();
        let u_hat = Matrix::from_fn(m * n, n, |r, c| eig.vectors[(r, c)] * roots[c]);
        Ok(SpectralFactor { m, n, sigma, u_hat })
    }
}

pub fn spectral_factor(j: &JointAffinity) -> Result<SpectralFactor> {
    SpectralFactor::from_symmetric(j.m, j.n, &j.matrix)
}

fn check_index(f: &SpectralFactor, i: usize) -> Result<()> {
    if i >= f.m {
        return Err(Error::validation(format!(
            "graph index {i} out of range for m={}",
            f.m
        )));
    }
    Ok(())
}

/// Hungarian projection of `Û^i·(Û^j)ᵀ`.
pub fn pairwise_match(f: &SpectralFactor, i: usize, j: usize) -> Result<PermutationMatrix> {
    check_index(f, i)?;
    check_index(f, j)?;
    if i == j {
        return Err(Error::validation(format!(
            "pairwise match needs two distinct graphs, got {i} twice"
        )));
    }
    hungarian(&f.block(i).matmul_t(&f.block(j))?)
}

/// Direct matches for every ordered pair; the diagonal holds identities.
pub fn direct_matches(f: &SpectralFactor) -> Result<Vec<Vec<PermutationMatrix>>> {
    let mut out = vec![vec![PermutationMatrix::identity(f.n); f.m]; f.m];
    for i in 0..f.m {
        for j in i + 1..f.m {
            let p = pairwise_match(f, i, j)?;
            out[j][i] = p.inverse();
            out[i][j] = p;
        }
    }
    Ok(out)
}

/// Pairwise permutations for all ordered pairs, routed through one pivot.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    m: usize,
    n: usize,
    pivot: usize,
    pairwise: Vec<Vec<PermutationMatrix>>,
}

#[derive(Serialize)]
struct PairEntry<'a> {
    i: usize,
    j: usize,
    assignment: &'a [usize],
}

impl MatchResult {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// `M̂^{ij}`; identity when `i == j`.
    pub fn get(&self, i: usize, j: usize) -> &PermutationMatrix {
        &self.pairwise[i][j]
    }

    pub fn all(&self) -> &[Vec<PermutationMatrix>] {
        &self.pairwise
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let pairs: Vec<PairEntry> = (0..self.m)
            .flat_map(|i| (0..self.m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| PairEntry {
                i,
                j,
                assignment: self.pairwise[i][j].assignment(),
            })
            .collect();
        serde_json::json!({ "m": self.m, "n": self.n, "pivot": self.pivot, "pairwise": pairs })
    }
}

/// Matches every graph to the pivot, then composes `M̂^{ij} =
/// M̂^{i,pivot} · M̂^{pivot,j}`.
pub fn consistent_matchings(f: &SpectralFactor, pivot: usize) -> Result<MatchResult> {
    check_index(f, pivot)?;
    let mut to_pivot = Vec::with_capacity(f.m);
    for i in 0..f.m {
        to_pivot.push(if i == pivot {
            PermutationMatrix::identity(f.n)
        } else {
            pairwise_match(f, i, pivot)?
        });
    }
    let from_pivot: Vec<PermutationMatrix> = to_pivot.iter().map(|p| p.inverse()).collect();
    let pairwise = (0..f.m)
        .map(|i| {
            (0..f.m)
                .map(|j| {
                    if i == j {
                        PermutationMatrix::identity(f.n)
                    } else {
                        to_pivot[i].then(&from_pivot[j])
                    }
                })
                .collect()
        })
        .collect();
    Ok(MatchResult {
        m: f.m,
        n: f.n,
        pivot,
        pairwise,
    })
}

/// Fraction of ordered triples of distinct graphs `(i, j, k)` with
/// `M^{ij} != M^{ik} · M^{kj}`. Zero when `m < 3`.
pub fn cycle_defect(matches: &[Vec<PermutationMatrix>]) -> Result<f64> {
    let m = matches.len();
    if matches.iter().any(|row| row.len() != m) {
        return Err(Error::shape("pairwise matches must form an m x m table"));
    }
    let n = matches.first().and_then(|r| r.first()).map_or(0, |p| p.n());
    if matches.iter().flatten().any(|p| p.n() != n) {
        return Err(Error::shape("pairwise matches disagree on node count"));
    }
    let (mut bad, mut total) = (0usize, 0usize);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                if i == j || j == k || i == k {
                    continue;
                }
                total += 1;
                if matches[i][j] != matches[i][k].then(&matches[k][j]) {
                    bad += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
}

/// Assembly, factorization and pivot projection in one call.
pub fn solve(
    blocks: &BTreeMap<(usize, usize), Matrix>,
    m: usize,
    n: usize,
    pivot: usize,
) -> Result<(JointAffinity, SpectralFactor, MatchResult)> {
    let joint = assemble_joint(blocks, m, n)?;
    let factor = spectral_factor(&joint)?;
    let result = consistent_matchings(&factor, pivot)?;
    Ok((joint, factor, result))
}

/// Intermediate state of one solve, for inspection.
#[derive(Serialize)]
pub struct DebugBundle<'a> {
    pub joint: &'a Matrix,
    pub sigma: &'a [f64],
    pub u_hat: &'a Matrix,
    pub matches: serde_json::Value,
    pub cycle_defect_direct: f64,
}

impl<'a> DebugBundle<'a> {
    pub fn new(j: &'a JointAffinity, f: &'a SpectralFactor, r: &MatchResult) -> Result<Self> {
        Ok(DebugBundle {
            joint: &j.matrix,
            sigma: &f.sigma,
            u_hat: &f.u_hat,
            matches: r.to_json_value(),
            cycle_defect_direct: cycle_defect(&direct_matches(f)?)?,
        })
    }
}
