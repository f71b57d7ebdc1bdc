//! Lawson-Hanson active-set solver for nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `||A x - b||_2`
    pub residual: f64,
    /// Largest violation of the optimality conditions: `|grad_j|` on the
    /// passive set and `max(0, -grad_j)` elsewhere, with
    /// `grad = A^T (A x - b)`.
    pub kkt_residual: f64,
    pub pivots: usize,
}

/// `min ||A x - b||_2` subject to `x >= 0`.
///
/// Gives up after `10 * ncols` pivots.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (rows, cols) = a.shape();
    if b.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: b.len(),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300)
        * b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-13 * scale * (rows as f64);
    let max_pivots = 10 * cols.max(1);

    let mut x = DVector::zeros(cols);
    let mut passive = vec![false; cols];
    let mut pivots = 0;
    // a column whose entry was driven out right after entering is not
    // reconsidered on the next pivot, which would otherwise cycle
    let mut just_rejected = None;
    loop {
        let resid = b - a * &x;
        let w = a.tr_mul(&resid);
        let candidate = (0..cols)
            .filter(|&j| !passive[j] && Some(j) != just_rejected)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NnlsNotConverged { pivots });
        }
        passive[j] = true;
        let entering = j;
        loop {
            let idx: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
            if idx.is_empty() {
                break;
            }
            let z = least_squares_on(a, b, &idx);
            if idx.iter().zip(z.iter()).all(|(_, &v)| v > 0.0) {
                for (&j, &v) in idx.iter().zip(z.iter()) {
                    x[j] = v;
                }
                break;
            }
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NnlsNotConverged { pivots });
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = idx[0];
            for (&j, &v) in idx.iter().zip(z.iter()) {
                if v <= 0.0 {
                    let t = x[j] / (x[j] - v);
                    if t < alpha {
                        alpha = t;
                        blocking = j;
                    }
                }
            }
            for (&j, &v) in idx.iter().zip(z.iter()) {
                x[j] += alpha * (v - x[j]);
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            x[blocking] = 0.0;
            passive[blocking] = false;
        }
        just_rejected = (!passive[entering]).then_some(entering);
    }
    let grad = a.tr_mul(&(a * &x - b));
    let kkt_residual = (0..cols)
        .map(|j| {
            if passive[j] {
                grad[j].abs()
            } else {
                (-grad[j]).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    Ok(NnlsSolution {
        residual: (a * &x - b).norm(),
        x: x.as_slice().to_vec(),
        kkt_residual,
        pivots,
    })
}

/// Unconstrained least squares on the columns `idx`.
fn least_squares_on(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(idx);
    let svd = sub.svd(true, true);
    let eps = svd.singular_values.max() * 1e-13 * (a.nrows().max(idx.len()) as f64);
    svd.solve(b, eps).expect("SVD computed with U and V")
}
