//! Newton projection onto the constraint manifold along the row space of a
//! frozen Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ConstrainedObjective;

/// Gram matrices with a reciprocal 1-norm condition number below this are
/// treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub status: ProjectionStatus,
    /// Projected state on success; the last Newton iterate on failure.
    pub state: Vec<f64>,
    pub lambda: Vec<f64>,
    pub newton_iterations: usize,
    /// `||Gamma||_inf` at `state`.
    pub residual: f64,
    /// Constraint Jacobian at `state`.
    pub jacobian: DMatrix<f64>,
}

impl ProjectionResult {
    pub fn succeeded(&self) -> bool {
        self.status == ProjectionStatus::Success
    }
}

/// Max-norm; NaN if any entry is NaN, so tolerance tests fail on it.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| {
        if x.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(x.abs())
        }
    })
}

/// Solves `g x = b`, rejecting ill-conditioned `g`.
///
/// The condition estimate is taken after scaling rows and then columns to
/// unit max-norm, so that it does not depend on the units of individual
/// constraints.
pub fn solve_checked(g: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let singular = |rcond: f64| Error::SingularGram {
        rcond: if rcond.is_nan() { 0.0 } else { rcond },
    };
    let mut g = g;
    let mut b = b.clone();
    for i in 0..n {
        let s = g.row(i).amax();
        if !(s > 0.0) || !s.is_finite() {
            return Err(singular(0.0));
        }
        g.row_mut(i).scale_mut(1.0 / s);
        b[i] /= s;
    }
    let mut col_scale = vec![1.0; n];
    for (j, cs) in col_scale.iter_mut().enumerate() {
        let s = g.column(j).amax();
        if !(s > 0.0) {
            return Err(singular(0.0));
        }
        *cs = 1.0 / s;
        g.column_mut(j).scale_mut(*cs);
    }
    let norm1 = one_norm(&g);
    let lu = g.lu();
    let inv = lu.try_inverse().ok_or(singular(0.0))?;
    let rcond = 1.0 / (norm1 * one_norm(&inv));
    if !(rcond >= SINGULAR_RCOND) {
        return Err(singular(rcond));
    }
    let mut x = lu.solve(&b).ok_or(singular(rcond))?;
    for (xj, cs) in x.iter_mut().zip(&col_scale) {
        *xj *= cs;
    }
    Ok(x)
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Finds `Lambda` with `Gamma(y_half + J_prev^T Lambda) = 0` by Newton's
/// method, where each step uses the Jacobian at the current iterate on the
/// left and the frozen `jac_prev` on the right.
///
/// At most `i_max` updates are made. Convergence is `||Gamma||_inf <= tol`.
pub fn project<P: ConstrainedObjective + ?Sized>(
    problem: &P,
    y_half: &[f64],
    jac_prev: &DMatrix<f64>,
    lambda_init: &[f64],
    i_max: usize,
    tol: f64,
) -> Result<ProjectionResult> {
    let n = problem.n_constraints();
    let dim = problem.dim();
    if y_half.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: y_half.len(),
        });
    }
    if lambda_init.len() != n || jac_prev.nrows() != n || jac_prev.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lambda_init.len(),
        });
    }
    let jac_prev_t = jac_prev.transpose();
    let base = DVector::from_column_slice(y_half);
    let mut lambda = DVector::from_column_slice(lambda_init);
    let mut gamma = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, dim);
    let mut iterations = 0;
    loop {
        let y = &base + &jac_prev_t * &lambda;
        problem.constraints_and_jacobian(y.as_slice(), &mut gamma, &mut jac);
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraints"));
        }
        let residual = inf_norm(&gamma);
        if residual <= tol || iterations >= i_max {
            let status = if residual <= tol {
                ProjectionStatus::Success
            } else {
                ProjectionStatus::Failure
            };
            return Ok(ProjectionResult {
                status,
                state: y.as_slice().to_vec(),
                lambda: lambda.as_slice().to_vec(),
                newton_iterations: iterations,
                residual,
                jacobian: jac,
            });
        }
        let gram = &jac * &jac_prev_t;
        let delta = solve_checked(gram, &DVector::from_column_slice(&gamma))?;
        lambda -= delta;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inf_norm_propagates_nan() {
        assert_eq!(inf_norm(&[1.0, -3.0]), 3.0);
        assert!(inf_norm(&[1.0, f64::NAN, 2.0]).is_nan());
        assert_eq!(inf_norm(&[]), 0.0);
    }

    /// `Gamma(y) = B y - b`, zero cost.
    struct Affine {
        b: DMatrix<f64>,
        rhs: Vec<f64>,
    }

    impl ConstrainedObjective for Affine {
        fn dim(&self) -> usize {
            self.b.ncols()
        }
        fn n_constraints(&self) -> usize {
            self.b.nrows()
        }
        fn cost(&self, _y: &[f64]) -> f64 {
            0.0
        }
        fn cost_gradient(&self, _y: &[f64], grad: &mut [f64]) -> Result<()> {
            grad.iter_mut().for_each(|g| *g = 0.0);
            Ok(())
        }
        fn constraints(&self, y: &[f64], out: &mut [f64]) {
            let v = &self.b * DVector::from_column_slice(y);
            for (i, o) in out.iter_mut().enumerate() {
                *o = v[i] - self.rhs[i];
            }
        }
        fn jacobian(&self, _y: &[f64], jac: &mut DMatrix<f64>) {
            *jac = self.b.clone();
        }
    }

    fn mean_problem(dim: usize, target: f64) -> Affine {
        Affine {
            b: DMatrix::from_element(1, dim, 1.0 / dim as f64),
            rhs: vec![target],
        }
    }

    #[test]
    fn affine_converges_in_one_step() {
        let p = Affine {
            b: DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0]),
            rhs: vec![0.3, -0.7],
        };
        let y = [0.4, -1.0, 2.0, 0.1];
        let r = project(&p, &y, &p.b, &[0.5, -0.2], 10, 1e-12).unwrap();
        assert!(r.succeeded());
        assert_eq!(r.newton_iterations, 1);
    }

    #[test]
    fn feasible_start_is_unchanged() {
        let p = mean_problem(4, 0.25);
        let y = [0.1, 0.2, 0.3, 0.4];
        let r = project(&p, &y, &p.b, &[0.0], 10, 1e-12).unwrap();
        assert_eq!(r.newton_iterations, 0);
        assert_eq!(r.state, y.to_vec());
    }

    #[test]
    fn mean_shift_projection() {
        let p = mean_problem(10, 0.3);
        let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.77).sin()).collect();
        let r = project(&p, &y, &p.b, &[0.0], 10, 1e-12).unwrap();
        let mean: f64 = r.state.iter().sum::<f64>() / 10.0;
        assert!((mean - 0.3).abs() <= 1e-12);
        // displacement is a uniform shift: the row space of the mean functional
        let shift = r.state[0] - y[0];
        for i in 0..10 {
            assert!((r.state[i] - y[i] - shift).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_iteration_budget_fails_without_update() {
        let p = mean_problem(3, 1.0);
        let y = [0.0; 3];
        let r = project(&p, &y, &p.b, &[0.0], 0, 1e-12).unwrap();
        assert_eq!(r.status, ProjectionStatus::Failure);
        assert_eq!(r.state, y.to_vec());
    }

    #[test]
    fn rank_deficient_gram_is_reported() {
        let p = Affine {
            b: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            rhs: vec![1.0, 0.0],
        };
        let err = project(&p, &[0.0, 0.0], &p.b, &[0.0, 0.0], 5, 1e-12).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }));
    }

    #[test]
    fn empty_constraint_set() {
        let p = Affine {
            b: DMatrix::zeros(0, 3),
            rhs: vec![],
        };
        let r = project(&p, &[1.0, 2.0, 3.0], &p.b, &[], 5, 1e-12).unwrap();
        assert!(r.succeeded());
        assert_eq!(r.newton_iterations, 0);
    }
}
