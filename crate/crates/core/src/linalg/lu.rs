// Triangular sweeps read clearest with explicit indices.
#![allow(clippy::needless_range_loop)]

use super::{check_square, Matrix};
use crate::error::{Error, Result};

/// Pivot tolerance relative to the Frobenius norm of the factored matrix.
const PIVOT_TOL: f64 = 1e-13;

/// LU factorization with partial pivoting, `P A = L U`, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    min_pivot: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        check_square(a, "LU input")?;
        let n = a.nrows();
        let scale = a.norm();
        let tol = PIVOT_TOL * scale;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (mut p, mut best) = (k, lu[(k, k)].abs());
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            min_pivot = min_pivot.min(best);
            if best <= tol || best == 0.0 {
                return Err(Error::Singular { pivot: best, tol });
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, system has {n}",
                b.nrows()
            )));
        }
        let mut x = Matrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            let mut col: Vec<f64> = self.perm.iter().map(|&p| b[(p, c)]).collect();
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= self.lu[(i, k)] * col[k];
                }
                col[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * col[k];
                }
                col[i] = s / self.lu[(i, i)];
            }
            for i in 0..n {
                x[(i, c)] = col[i];
            }
        }
        Ok(x)
    }

    /// Solves `Aᵀ X = B` with the same factorization.
    pub fn solve_transpose(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, system has {n}",
                b.nrows()
            )));
        }
        let mut x = Matrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            // Uᵀ w = b
            let mut w: Vec<f64> = (0..n).map(|i| b[(i, c)]).collect();
            for i in 0..n {
                let mut s = w[i];
                for k in 0..i {
                    s -= self.lu[(k, i)] * w[k];
                }
                w[i] = s / self.lu[(i, i)];
            }
            // Lᵀ v = w
            for i in (0..n).rev() {
                let mut s = w[i];
                for k in i + 1..n {
                    s -= self.lu[(k, i)] * w[k];
                }
                w[i] = s;
            }
            for i in 0..n {
                x[(self.perm[i], c)] = w[i];
            }
        }
        Ok(x)
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(b)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    solve(a, &Matrix::identity(n, n))
}
