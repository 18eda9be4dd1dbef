//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::Matrix;
use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// Column `k` of `vectors` belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const MAX_SWEEPS: usize = 100;

/// Full spectrum of a symmetric matrix. The input is symmetrized as
/// `(A + Aᵀ)/2` before rotating.
pub fn sym_eig(a: &Matrix) -> Result<EigenResult> {
    if !a.is_square() {
        return Err(Error::shape(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("sym_eig input has non-finite entries".into()));
    }
    let n = a.rows();
    let mut s = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let threshold = 1e-12 * s.frobenius();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&s) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut s, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&s) > threshold {
        return Err(Error::Numerical(format!(
            "jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[(j, j)].total_cmp(&s[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| s[(k, k)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(EigenResult { values, vectors })
}

fn off_diagonal_norm(s: &Matrix) -> f64 {
    let n = s.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += s[(i, j)] * s[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Annihilates `s[(p, q)]` with one Jacobi rotation and accumulates the
/// rotation into `v`.
fn rotate(s: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = s[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = s[(p, p)];
    let aqq = s[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let sn = t * c;
    let n = s.rows();

    for k in 0..n {
        let skp = s[(k, p)];
        let skq = s[(k, q)];
        s[(k, p)] = c * skp - sn * skq;
        s[(k, q)] = sn * skp + c * skq;
    }
    for k in 0..n {
        let spk = s[(p, k)];
        let sqk = s[(q, k)];
        s[(p, k)] = c * spk - sn * sqk;
        s[(q, k)] = sn * spk + c * sqk;
    }
    s[(p, q)] = 0.0;
    s[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - sn * vkq;
        v[(k, q)] = sn * vkp + c * vkq;
    }
}
