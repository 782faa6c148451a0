//! Small dense solves backed by nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub(crate) fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Outcome of a symmetric positive (semi)definite solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveInfo {
    /// Ridge added to the diagonal, 0 when the plain Cholesky succeeded.
    pub ridge: f64,
}

/// Solves `X G = Y` for `X` (i.e. `G Xᵀ = Yᵀ`) with `G` symmetric PSD.
/// Falls back to a `1e-10·trace(G)` ridge when `G` is not positive definite.
pub fn solve_gram_right(y: &Matrix, g: &Matrix) -> Result<(Matrix, SolveInfo)> {
    let n = g.rows();
    if g.cols() != n || y.cols() != n {
        return Err(Error::ShapeMismatch(format!("gram {:?} against rhs {:?}", g.shape(), y.shape())));
    }
    let gn = to_na(g);
    let rhs = to_na(&y.transpose());
    let (chol, ridge) = match gn.clone().cholesky() {
        Some(c) => (c, 0.0),
        None => {
            let ridge = (1e-10 * g.trace()).max(f64::MIN_POSITIVE);
            let mut reg = gn;
            for i in 0..n {
                reg[(i, i)] += ridge;
            }
            let c = reg
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("gram matrix is not positive semidefinite".into()))?;
            (c, ridge)
        }
    };
    let x = chol.solve(&rhs);
    Ok((from_na(&x.transpose()), SolveInfo { ridge }))
}

/// Ridge least squares `argmin_x ‖D x − y‖² + λ‖x‖²` with `λ = ridge_rel·trace(DᵀD)`.
pub fn ridge_least_squares(design: &Matrix, y: &[f64], ridge_rel: f64) -> Result<Vec<f64>> {
    if design.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!("design has {} rows, target {}", design.rows(), y.len())));
    }
    let r = design.cols();
    let g = design.gram();
    let lambda = ridge_rel * g.trace();
    let mut gn = to_na(&g);
    for i in 0..r {
        gn[(i, i)] += lambda.max(f64::MIN_POSITIVE);
    }
    let mut rhs = DVector::zeros(r);
    for (row, &target) in y.iter().enumerate() {
        for (q, &d) in design.row(row).iter().enumerate() {
            rhs[q] += d * target;
        }
    }
    let sol = match gn.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gn
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("singular least-squares design".into()))?,
    };
    Ok(sol.iter().copied().collect())
}

/// Dense inverse via LU; `None` when singular.
pub fn invert(m: &Matrix) -> Option<Matrix> {
    to_na(m).try_inverse().map(|inv| from_na(&inv))
}
