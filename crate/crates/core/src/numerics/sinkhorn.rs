//! Sinkhorn normalization of strictly positive square matrices.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Iteration budget for [`sinkhorn`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            max_iter: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Axis {
    Rows,
    Cols,
}

/// One normalization half-step: the normalized output and the sums it was
/// divided by. Enough to differentiate the step without the input.
#[derive(Clone, Debug)]
pub(crate) struct HalfStep {
    pub axis: Axis,
    pub output: Matrix,
    pub sums: Vec<f64>,
}

/// Alternating row/column normalization.
///
/// Every iteration divides rows by their sums, then columns by theirs, and
/// stops once every row sum is within `tol` of one (column sums are exact
/// right after the column step). At least one iteration always runs.
pub fn sinkhorn(m: &Matrix, max_iter: usize, tol: f64) -> Result<Matrix> {
    let (out, _) = run(m, SinkhornConfig { max_iter, tol }, false)?;
    Ok(out)
}

pub fn sinkhorn_with(m: &Matrix, config: SinkhornConfig) -> Result<Matrix> {
    sinkhorn(m, config.max_iter, config.tol)
}

pub(crate) fn check_input(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "sinkhorn needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() == 0 {
        return Err(Error::contract("sinkhorn on an empty matrix"));
    }
    if let Some(v) = m.as_slice().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!(
            "sinkhorn needs strictly positive finite entries, found {v}"
        )));
    }
    Ok(())
}

/// Runs the iteration, optionally recording every half-step for the
/// reverse pass.
pub(crate) fn run(
    m: &Matrix,
    config: SinkhornConfig,
    record: bool,
) -> Result<(Matrix, Vec<HalfStep>)> {
    check_input(m)?;
    let mut steps = Vec::new();
    let mut x = m.clone();
    for _ in 0..config.max_iter.max(1) {
        let sums = x.row_sums();
        for (i, s) in sums.iter().enumerate() {
            for v in x.row_mut(i) {
                *v /= s;
            }
        }
        if record {
            steps.push(HalfStep {
                axis: Axis::Rows,
                output: x.clone(),
                sums,
            });
        }

        let sums = x.col_sums();
        for i in 0..x.rows() {
            for (v, s) in x.row_mut(i).iter_mut().zip(&sums) {
                *v /= s;
            }
        }
        if record {
            steps.push(HalfStep {
                axis: Axis::Cols,
                output: x.clone(),
                sums,
            });
        }

        let deviation = x
            .row_sums()
            .iter()
            .fold(0.0f64, |d, s| d.max((s - 1.0).abs()));
        if deviation <= config.tol {
            break;
        }
    }
    Ok((x, steps))
}

/// Reverse pass through recorded half-steps: maps the gradient with
/// respect to the output onto the gradient with respect to the input.
pub(crate) fn backward(steps: &[HalfStep], grad_out: &Matrix) -> Matrix {
    let mut g = grad_out.clone();
    for step in steps.iter().rev() {
        let y = &step.output;
        let n = y.rows();
        match step.axis {
            Axis::Rows => {
                for i in 0..n {
                    let proj: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    let s = step.sums[i];
                    for v in g.row_mut(i) {
                        *v = (*v - proj) / s;
                    }
                }
            }
            Axis::Cols => {
                let mut proj = vec![0.0; n];
                for i in 0..n {
                    for ((p, a), b) in proj.iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *p += a * b;
                    }
                }
                for i in 0..n {
                    for ((v, p), s) in g.row_mut(i).iter_mut().zip(&proj).zip(&step.sums) {
                        *v = (*v - p) / s;
                    }
                }
            }
        }
    }
    g
}
