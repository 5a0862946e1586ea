use super::Matrix;
use crate::error::{Error, Result};

/// Thin QR with column pivoting: `M P = Q R`.
///
/// `perm[j]` is the column of `M` that lands in position `j` of `M P`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    pub q: Matrix,
    pub r: Matrix,
    pub perm: Vec<usize>,
}

impl PivotedQr {
    /// The permutation as a matrix, so that `M * P == Q * R`.
    pub fn permutation_matrix(&self) -> Matrix {
        let n = self.perm.len();
        let mut p = Matrix::zeros(n, n);
        for (j, &src) in self.perm.iter().enumerate() {
            p[(src, j)] = 1.0;
        }
        p
    }

    /// `R Pᵀ`, i.e. the factor `G` with `M = Q G`.
    pub fn r_unpermuted(&self) -> Matrix {
        &self.r * self.permutation_matrix().transpose()
    }

    /// Numerical rank: diagonal entries of R above `rtol * |R_00|`.
    pub fn rank(&self, rtol: f64) -> usize {
        let k = self.r.nrows().min(self.r.ncols());
        if k == 0 {
            return 0;
        }
        let top = self.r[(0, 0)].abs();
        (0..k)
            .take_while(|&i| self.r[(i, i)].abs() > rtol * top)
            .count()
    }

    /// Least-squares / square solve of `M X = B` through the factorization.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.r.ncols();
        if self.r.nrows() != n {
            return Err(Error::Dimension(
                "pivoted QR solve needs rows >= cols".into(),
            ));
        }
        let qtb = self.q.transpose() * b;
        let mut y = Matrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            for i in (0..n).rev() {
                let mut s = qtb[(i, c)];
                for k in i + 1..n {
                    s -= self.r[(i, k)] * y[(k, c)];
                }
                let d = self.r[(i, i)];
                if d == 0.0 {
                    return Err(Error::Singular {
                        pivot: 0.0,
                        tol: 0.0,
                    });
                }
                y[(i, c)] = s / d;
            }
        }
        let mut x = Matrix::zeros(n, b.ncols());
        for (j, &src) in self.perm.iter().enumerate() {
            x.row_mut(src).copy_from(&y.row(j));
        }
        Ok(x)
    }
}

/// Householder reflector for `x`: returns `(v, beta)` with `(I - beta v vᵀ) x = ∓|x| e1`.
fn householder(x: &[f64]) -> (Vec<f64>, f64) {
    let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = x.to_vec();
    if alpha == 0.0 {
        return (v, 0.0);
    }
    let s = if x[0] >= 0.0 { alpha } else { -alpha };
    v[0] += s;
    let vnorm2: f64 = v.iter().map(|t| t * t).sum();
    (v, 2.0 / vnorm2)
}

/// Applies the stored reflectors to the first `k` columns of the identity.
fn accumulate_q(reflectors: &[(Vec<f64>, f64)], rows: usize, k: usize) -> Matrix {
    let mut q = Matrix::identity(rows, k);
    for (step, (v, beta)) in reflectors.iter().enumerate().rev() {
        if *beta == 0.0 {
            continue;
        }
        for c in 0..k {
            let dot: f64 = v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi * q[(step + i, c)])
                .sum();
            let f = beta * dot;
            for (i, vi) in v.iter().enumerate() {
                q[(step + i, c)] -= f * vi;
            }
        }
    }
    q
}

fn householder_qr(m: &Matrix, pivot: bool, q_cols: usize) -> (Matrix, Matrix, Vec<usize>) {
    let (rows, cols) = m.shape();
    let steps = rows.min(cols);
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut reflectors = Vec::with_capacity(steps);
    for k in 0..steps {
        if pivot {
            // recompute trailing column norms each step; sizes here are small
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..cols {
                let n2: f64 = (k..rows).map(|i| a[(i, j)] * a[(i, j)]).sum();
                if n2 > best_norm {
                    best_norm = n2;
                    best = j;
                }
            }
            if best != k {
                a.swap_columns(best, k);
                perm.swap(best, k);
            }
        }
        let x: Vec<f64> = (k..rows).map(|i| a[(i, k)]).collect();
        let (v, beta) = householder(&x);
        if beta != 0.0 {
            for j in k..cols {
                let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[(k + i, j)]).sum();
                let f = beta * dot;
                for (i, vi) in v.iter().enumerate() {
                    a[(k + i, j)] -= f * vi;
                }
            }
        }
        for i in k + 1..rows {
            a[(i, k)] = 0.0;
        }
        reflectors.push((v, beta));
    }
    let mut q = accumulate_q(&reflectors, rows, q_cols);
    let mut r = a.rows(0, q_cols.min(rows)).into_owned();
    // non-negative diagonal of R
    for k in 0..steps.min(q_cols) {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r, perm)
}

/// Thin QR with column pivoting (largest remaining column norm first).
pub fn qr_pivoted(m: &Matrix) -> Result<PivotedQr> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::Dimension(format!(
            "pivoted QR needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let (q, r, perm) = householder_qr(m, true, cols);
    Ok(PivotedQr { q, r, perm })
}

/// Full (square Q) Householder QR without pivoting: `M = Q R`.
pub fn qr_full(m: &Matrix) -> (Matrix, Matrix) {
    let rows = m.nrows();
    let (q, r, _) = householder_qr(m, false, rows);
    (q, r)
}
