//! Small dense linear-algebra helpers on top of `nalgebra`.

use crate::{Error, Matrix, Result, Vector};

/// Relative tolerance used when checking matrix symmetry.
const SYMMETRY_TOL: f64 = 1e-10;

/// Checks symmetry and returns the lower Cholesky factor `L` with `L Lᵀ = A`.
pub fn cholesky_lower(a: &Matrix, what: &str) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = a.amax().max(1e-300);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::SingularCovariance(format!("{what} is not symmetric")));
            }
        }
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularCovariance(format!("{what} has non-finite entries")));
    }
    nalgebra::Cholesky::new(a.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::SingularCovariance(format!("{what} is not positive definite")))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &Matrix, what: &str) -> Result<Matrix> {
    cholesky_lower(a, what)?;
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| Error::SingularCovariance(format!("{what} is not positive definite")))?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Spectral condition number `max|eig| / min|eig|` of a symmetric matrix.
///
/// Returns `f64::INFINITY` when the smallest eigenvalue magnitude is zero.
pub fn condition_number_sym(a: &Matrix) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(a));
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for ev in eig.eigenvalues.iter() {
        lo = lo.min(ev.abs());
        hi = hi.max(ev.abs());
    }
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: &Matrix) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(a));
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solves a general square system with full pivoting; `None` if singular.
pub fn solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    let lu = a.clone().full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    lu.solve(b)
}

/// Inverse of a general square matrix with full pivoting; `None` if singular.
pub fn inverse(a: &Matrix) -> Option<Matrix> {
    let lu = a.clone().full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    lu.try_inverse()
}

/// Selects rows/columns `idx` of a square matrix.
pub fn submatrix(a: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Selects entries `idx` of a vector.
pub fn subvector(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Builds a square matrix from row slices; fails on ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}
