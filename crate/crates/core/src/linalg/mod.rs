//! Dense real linear algebra used throughout the crate.
//!
//! Storage and products come from `nalgebra::DMatrix`; the factorizations with
//! numerical contracts the rest of the crate relies on (pivoted QR, LU with
//! reported pivots, the matrix exponential, Lyapunov solves, Jacobi SVD and
//! eigendecompositions) live here so their tolerances are explicit.

mod expm;
mod jacobi;
mod lu;
mod lyapunov;
mod qr;

pub use expm::{expm, expm_scaling};
pub use jacobi::{cond2, psd_factor, singular_values, symmetric_eigen, SymmetricEigen};
pub use lu::{inverse, solve, Lu};
pub use lyapunov::{lyapunov_residual, lyapunov_solve};
pub use qr::{qr_full, qr_pivoted, PivotedQr};

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Builds a matrix from row-major entries, rejecting non-finite values.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("empty shape {rows}x{cols}")));
    }
    if entries.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} entries for a {rows}x{cols} matrix",
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    check_finite(&m)?;
    Ok(m)
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn check_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Frobenius norm.
pub fn norm(m: &Matrix) -> f64 {
    m.norm()
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Returns (M + Mᵀ)/2 together with the Frobenius norm of the removed skew part.
pub fn symmetrize(m: &Matrix) -> (Matrix, f64) {
    let t = m.transpose();
    let skew = (m - &t).norm() * 0.5;
    ((m + t) * 0.5, skew)
}

pub fn hilbert(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// Block-diagonal matrix assembled from square or rectangular blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks matrices with equal column counts vertically.
pub fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

/// Concatenates matrices with equal row counts horizontally.
pub fn hstack(parts: &[&Matrix]) -> Matrix {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

/// Copies the `(i, j)` block of size `b x b` out of a block matrix.
pub fn block(m: &Matrix, i: usize, j: usize, b: usize) -> Matrix {
    m.view((i * b, j * b), (b, b)).into_owned()
}

/// Eigenvalues of a general square matrix (Schur form from nalgebra).
pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let qa = qr_pivoted(a)?.q;
    let qb = qr_pivoted(b)?.q;
    // sines of the angles are the singular values of the part of span(b) outside span(a)
    let outside = &qb - &qa * (qa.transpose() * &qb);
    let s = singular_values(&outside);
    let mut angles: Vec<f64> = s.iter().map(|v| v.min(1.0).asin()).collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    Ok(angles)
}
