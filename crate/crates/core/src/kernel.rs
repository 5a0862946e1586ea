//! Reference memory kernels and correlation functions from the full model,
//! plus the relative `L²` error metric used to compare them.

use crate::error::{Error, Result};
use crate::linalg::{expm, Matrix};
use crate::system::{FullSystem, PartitionBlocks};

/// Largest full dimension for which dense reference evaluations are allowed.
pub const MAX_REFERENCE_DIM: usize = 500;

/// Evenly spaced grid of `points` values on `[start, end]`.
pub fn uniform_grid(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let h = (end - start) / (points - 1) as f64;
            (0..points).map(|i| start + h * i as f64).collect()
        }
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Invalid(
            "time grid must be finite and non-negative".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("time grid must be ascending".into()));
    }
    Ok(())
}

/// `e^{F t} X₀` for every `t` in an ascending grid.
///
/// Uniform grids are walked with one exponential of the step; other grids fall
/// back to an exponential per point.
pub fn propagate(f: &Matrix, x0: &Matrix, t_grid: &[f64]) -> Result<Vec<Matrix>> {
    check_grid(t_grid)?;
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    let h = if t_grid.len() > 1 {
        t_grid[1] - t_grid[0]
    } else {
        0.0
    };
    let uniform = t_grid.len() > 2
        && t_grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(t_grid[t_grid.len() - 1]));
    if !uniform {
        return t_grid.iter().map(|&t| Ok(expm(&(f * t))? * x0)).collect();
    }
    let step = expm(&(f * h))?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut x = expm(&(f * t_grid[0]))? * x0;
    for _ in t_grid {
        let next = &step * &x;
        out.push(std::mem::replace(&mut x, next));
    }
    Ok(out)
}

/// Exact memory kernel `θ(t) = L e^{Dt} R` of the full model.
pub fn exact_kernel(sys: &FullSystem, t_grid: &[f64]) -> Result<Vec<Matrix>> {
    if sys.d() > MAX_REFERENCE_DIM {
        return Err(Error::Invalid(format!(
            "reference kernel limited to d <= {MAX_REFERENCE_DIM}, got {}",
            sys.d()
        )));
    }
    let blocks = PartitionBlocks::new(sys);
    let l = blocks.l_matrix();
    let states = propagate(&blocks.d_matrix(), &blocks.r_matrix()?, t_grid)?;
    Ok(states.iter().map(|s| &l * s).collect())
}

/// Drift of the full state `(x, v)`: `[[0, I], [−A, −γI]]`.
pub fn full_drift(sys: &FullSystem) -> Matrix {
    let d = sys.d();
    let mut f = Matrix::zeros(2 * d, 2 * d);
    f.view_mut((0, d), (d, d))
        .copy_from(&Matrix::identity(d, d));
    f.view_mut((d, 0), (d, d)).copy_from(&(-&sys.a));
    f.view_mut((d, d), (d, d))
        .copy_from(&(Matrix::identity(d, d) * -sys.gamma));
    f
}

/// Exact coarse velocity autocorrelation `⟨p(t+τ) p(t)ᵀ⟩` of the stationary full model.
pub fn exact_full_vacf(sys: &FullSystem, t_grid: &[f64]) -> Result<Vec<Matrix>> {
    if sys.d() > MAX_REFERENCE_DIM {
        return Err(Error::Invalid(format!(
            "reference correlation limited to d <= {MAX_REFERENCE_DIM}, got {}",
            sys.d()
        )));
    }
    let d = sys.d();
    // stationary covariance kBT·blockdiag(A⁻¹, I): its velocity columns restricted to Φ
    let mut start = Matrix::zeros(2 * d, sys.m());
    start
        .view_mut((d, 0), (d, sys.m()))
        .copy_from(&(&sys.phi * sys.kbt));
    let states = propagate(&full_drift(sys), &start, t_grid)?;
    let out = sys.phi.transpose();
    Ok(states.iter().map(|s| &out * s.rows(d, d)).collect())
}

/// Relative `L²` errors of the diagonal components over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelError {
    pub per_component: Vec<f64>,
    pub worst: f64,
    /// Error of the whole matrix function in the Frobenius norm.
    pub frobenius: f64,
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Compares two sampled matrix functions on `[window.0, window.1]`.
pub fn kernel_error(
    approx: &[Matrix],
    exact: &[Matrix],
    t_grid: &[f64],
    window: (f64, f64),
) -> Result<KernelError> {
    if approx.len() != exact.len() || exact.len() != t_grid.len() {
        return Err(Error::Dimension(format!(
            "grid mismatch: {} approximate, {} exact samples, {} times",
            approx.len(),
            exact.len(),
            t_grid.len()
        )));
    }
    let idx: Vec<usize> = (0..t_grid.len())
        .filter(|&i| t_grid[i] >= window.0 - 1e-12 && t_grid[i] <= window.1 + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(Error::Invalid(
            "window holds fewer than two grid points".into(),
        ));
    }
    let shape = exact[idx[0]].shape();
    if approx.iter().chain(exact).any(|s| s.shape() != shape) {
        return Err(Error::Dimension("samples have inconsistent shapes".into()));
    }
    let t: Vec<f64> = idx.iter().map(|&i| t_grid[i]).collect();
    let rel = |diff: &dyn Fn(usize) -> f64, base: &dyn Fn(usize) -> f64| {
        let num: Vec<f64> = idx.iter().map(|&i| diff(i)).collect();
        let den: Vec<f64> = idx.iter().map(|&i| base(i)).collect();
        (trapezoid(&t, &num) / trapezoid(&t, &den).max(f64::MIN_POSITIVE)).sqrt()
    };
    let m = shape.0.min(shape.1);
    let per_component: Vec<f64> = (0..m)
        .map(|c| {
            rel(&|i| (approx[i][(c, c)] - exact[i][(c, c)]).powi(2), &|i| {
                exact[i][(c, c)].powi(2)
            })
        })
        .collect();
    let frobenius = rel(&|i| (&approx[i] - &exact[i]).norm_squared(), &|i| {
        exact[i].norm_squared()
    });
    let worst = per_component.iter().copied().fold(0.0, f64::max);
    Ok(KernelError {
        per_component,
        worst,
        frobenius,
    })
}
