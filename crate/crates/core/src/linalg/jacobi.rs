use super::{check_square, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Singular values (descending) by one-sided Jacobi rotations.
///
/// One-sided Jacobi keeps small singular values accurate to high relative
/// precision for column-graded matrices, which is what the block Hankel
/// matrices of the moment-matching path look like.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut a = if m.nrows() >= m.ncols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, n) = a.shape();
    let eps = f64::EPSILON * rows as f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    let (x, y) = (a[(r, i)], a[(r, j)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (x, y) = (a[(r, i)], a[(r, j)]);
                    a[(r, i)] = c * x - s * y;
                    a[(r, j)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// 2-norm condition number; `+inf` for a singular matrix.
pub fn cond2(a: &Matrix) -> f64 {
    let s = singular_values(a);
    let (max, min) = (s[0], s[s.len() - 1]);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    check_square(s, "symmetric eigen input")?;
    let n = s.nrows();
    let mut a = (s + s.transpose()) * 0.5;
    let mut v = Matrix::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off == 0.0 {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                if apq.abs() <= f64::EPSILON * 0.5 * (app.abs() * aqq.abs()).sqrt() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        // sign convention: largest-magnitude component positive
        let (mut big, mut val) = (0.0, 0.0);
        for x in col.iter() {
            if x.abs() > big {
                big = x.abs();
                val = *x;
            }
        }
        if val < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues below `-NEG_TOL * ‖S‖` mark a covariance as not PSD.
const NEG_TOL: f64 = 1e-10;
/// Eigenvalues at or below `KEEP_TOL * ‖S‖` are treated as structural zeros.
const KEEP_TOL: f64 = 1e-12;

/// Rank-revealing factor `F` with `F Fᵀ = S` for a symmetric PSD `S`.
///
/// Small negative eigenvalues (down to `-1e-10 ‖S‖`) are clipped to zero;
/// `F` keeps one column per retained positive eigenvalue.
pub fn psd_factor(s: &Matrix) -> Result<Matrix> {
    check_square(s, "covariance")?;
    let n = s.nrows();
    let scale = s.norm();
    if scale == 0.0 {
        return Ok(Matrix::zeros(n, 0));
    }
    let eig = symmetric_eigen(s)?;
    if let Some(&lowest) = eig.values.last() {
        if lowest < -NEG_TOL * scale {
            return Err(Error::NotPsd {
                eigenvalue: lowest,
                tol: NEG_TOL * scale,
            });
        }
    }
    let kept: Vec<usize> = (0..n)
        .filter(|&i| eig.values[i] > KEEP_TOL * scale)
        .collect();
    let mut f = Matrix::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let col = eig.vectors.column(i) * eig.values[i].sqrt();
        f.set_column(c, &col);
    }
    Ok(f)
}
