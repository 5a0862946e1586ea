use super::{check_square, lu::Lu, Matrix};
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-9;

/// Relative residual `‖A Q + Q Aᵀ + C‖ / ‖C‖` (falls back to `‖A‖‖Q‖` scaling when `C = 0`).
pub fn lyapunov_residual(a: &Matrix, q: &Matrix, c: &Matrix) -> f64 {
    let r = (a * q + q * a.transpose() + c).norm();
    let scale = c.norm().max(1e-300);
    if c.norm() == 0.0 {
        r / (a.norm() * q.norm()).max(1e-300)
    } else {
        r / scale
    }
}

fn packed_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // row-major upper triangle
    i * n - i * (i + 1) / 2 + j
}

/// Solves `A Q + Q Aᵀ = -C` for symmetric `Q`.
///
/// The symmetric unknowns are linearized into an `n(n+1)/2` system solved by
/// LU with one step of iterative refinement; the result is checked against the
/// residual tolerance and symmetrized exactly.
pub fn lyapunov_solve(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    check_square(a, "Lyapunov drift")?;
    check_square(c, "Lyapunov right-hand side")?;
    let n = a.nrows();
    if c.nrows() != n {
        return Err(Error::Dimension(format!(
            "drift is {n}x{n} but right-hand side is {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let unknowns = n * (n + 1) / 2;
    let mut op = Matrix::zeros(unknowns, unknowns);
    let mut rhs = Matrix::zeros(unknowns, 1);
    for i in 0..n {
        for j in i..n {
            let row = packed_index(i, j, n);
            // (A Q)_{ij} = Σ_k A_ik Q_kj ; (Q Aᵀ)_{ij} = Σ_k Q_ik A_jk
            for k in 0..n {
                op[(row, packed_index(k, j, n))] += a[(i, k)];
                op[(row, packed_index(i, k, n))] += a[(j, k)];
            }
            rhs[(row, 0)] = -0.5 * (c[(i, j)] + c[(j, i)]);
        }
    }
    let lu = Lu::factor(&op)?;
    let mut x = lu.solve(&rhs)?;
    let r = &rhs - &op * &x;
    x += lu.solve(&r)?;

    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = x[(packed_index(i, j, n), 0)];
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    let residual = lyapunov_residual(a, &q, c);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::Lyapunov { residual });
    }
    Ok(q)
}
