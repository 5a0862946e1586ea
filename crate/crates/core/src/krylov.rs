//! Petrov–Galerkin projection of the eliminated dynamics onto block Krylov
//! subspaces, either as raw power bases or through non-symmetric block
//! Lanczos bi-orthogonalization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cond2, expm, hstack, qr_pivoted, singular_values, solve, Lu, Matrix};
use crate::operators::ReducedOperators;

/// Relative size below which a new direction counts as linearly dependent.
const RANK_TOL: f64 = 1e-13;
/// `σ_min(δ) ≤ BREAKDOWN_TOL · σ_max(δ)` signals a serious breakdown.
const BREAKDOWN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Lanczos,
}

/// Which operator generates the subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    /// Powers of `D` on `R` and of `Dᵀ` on `D⁻ᵀLᵀ`.
    Standard,
    /// Powers of `D⁻¹` and `D⁻ᵀ` from the same starting blocks.
    Inverse,
    /// Powers of `(D − σ)⁻¹` and its transpose.
    Shifted(f64),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Raw => "raw",
            Method::Lanczos => "lanczos",
        })
    }
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subspace::Standard => f.write_str("standard"),
            Subspace::Inverse => f.write_str("inverse"),
            Subspace::Shifted(s) => write!(f, "shifted({s})"),
        }
    }
}

/// Bases of a projection and the projected matrices.
#[derive(Debug, Clone)]
pub struct ProjectionBundle {
    pub n: usize,
    pub m: usize,
    /// Trial basis, `2d x nm`.
    pub v: Matrix,
    /// Test basis, `2d x nm`.
    pub w: Matrix,
    /// `Wᵀ V`
    pub mhat: Matrix,
    /// `Wᵀ D V`
    pub dhat: Matrix,
    /// `Wᵀ R`
    pub wtr: Matrix,
    /// `L V`, `m x nm`
    pub lv: Matrix,
    pub method: Method,
    pub subspace: Subspace,
}

fn project(
    ops: &ReducedOperators,
    n: usize,
    v: Matrix,
    w: Matrix,
    method: Method,
    subspace: Subspace,
) -> Result<ProjectionBundle> {
    let wt = w.transpose();
    let mhat = &wt * &v;
    let dhat = &wt * ops.apply_d(&v)?;
    let wtr = &wt * ops.rtilde();
    let lv = ops.lv_map(&v)?;
    Ok(ProjectionBundle {
        n,
        m: ops.m(),
        v,
        w,
        mhat,
        dhat,
        wtr,
        lv,
        method,
        subspace,
    })
}

/// Index (1-based) of the first block whose columns lose rank, if any.
fn first_dependent_block(basis: &Matrix, m: usize) -> Result<Option<usize>> {
    let mut scaled = basis.clone();
    for mut col in scaled.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    let n = basis.ncols() / m;
    for k in 1..=n {
        let f = qr_pivoted(&scaled.columns(0, k * m).into_owned())?;
        if f.rank(RANK_TOL) < k * m {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Raw power bases `V = [R, KR, …]`, `W = [D⁻ᵀLᵀ, KᵀD⁻ᵀLᵀ, …]` with `K` the generating operator.
pub fn build_raw_bases(
    ops: &ReducedOperators,
    n: usize,
    subspace: Subspace,
) -> Result<ProjectionBundle> {
    if n == 0 {
        return Err(Error::Invalid("order must be at least 1".into()));
    }
    if 2 * ops.d() < n * ops.m() {
        return Err(Error::Invalid(format!(
            "order {n} needs {} basis vectors but the embedding has dimension {}",
            n * ops.m(),
            2 * ops.d()
        )));
    }
    let resolvent = match subspace {
        Subspace::Standard => None,
        Subspace::Inverse => Some(ops.resolvent(0.0)?),
        Subspace::Shifted(s) => Some(ops.resolvent(s)?),
    };
    let mut vs = vec![ops.rtilde().clone()];
    let mut ws = vec![ops.ltilde_t().clone()];
    for k in 1..n {
        let (vp, wp) = (&vs[k - 1], &ws[k - 1]);
        let (vn, wn) = match &resolvent {
            None => (ops.apply_d(vp)?, ops.apply_dt(wp)?),
            Some(r) => (r.apply(vp)?, r.apply_t(wp)?),
        };
        vs.push(vn);
        ws.push(wn);
    }
    let v = hstack(&vs.iter().collect::<Vec<_>>());
    let w = hstack(&ws.iter().collect::<Vec<_>>());
    for (basis, name) in [(&v, "trial"), (&w, "test")] {
        if let Some(k) = first_dependent_block(basis, ops.m())? {
            return Err(Error::Breakdown {
                stage: k,
                msg: format!("{name} basis block {k} is linearly dependent on earlier blocks"),
            });
        }
    }
    project(ops, n, v, w, Method::Raw, subspace)
}

fn check_delta(delta: &Matrix, stage: usize) -> Result<()> {
    let s = singular_values(delta);
    let (max, min) = (s[0], s[s.len() - 1]);
    if !(min > BREAKDOWN_TOL * max) {
        return Err(Error::Breakdown {
            stage,
            msg: format!(
                "bi-orthogonality block is singular (singular values {max:.3e} .. {min:.3e})"
            ),
        });
    }
    Ok(())
}

/// Normalizes a block by pivoted QR: `X = Q G` with `G = R Pᵀ`.
fn normalize(x: &Matrix, stage: usize, scale: f64, name: &str) -> Result<(Matrix, Matrix)> {
    let f = qr_pivoted(x)?;
    let top = f.r[(0, 0)].abs();
    if f.rank(RANK_TOL) < x.ncols() || top <= RANK_TOL * scale {
        return Err(Error::Breakdown {
            stage,
            msg: format!("{name} block lost rank during normalization"),
        });
    }
    let g = f.r_unpermuted();
    Ok((f.q, g))
}

/// Non-symmetric block Lanczos bi-orthogonalization started from `V₁ = R`, `W₁ = D⁻ᵀLᵀ`.
///
/// Each stage runs the three-term recurrence and then removes any residual
/// components along earlier blocks, so bi-orthogonality does not decay with
/// the stage count. New blocks are normalized by QR with column pivoting.
pub fn blbio(ops: &ReducedOperators, n: usize) -> Result<ProjectionBundle> {
    if n == 0 {
        return Err(Error::Invalid("order must be at least 1".into()));
    }
    if 2 * ops.d() < n * ops.m() {
        return Err(Error::Invalid(format!(
            "order {n} needs {} basis vectors but the embedding has dimension {}",
            n * ops.m(),
            2 * ops.d()
        )));
    }
    let mut vs = vec![ops.rtilde().clone()];
    let mut ws = vec![ops.ltilde_t().clone()];
    let mut deltas = vec![ws[0].transpose() * &vs[0]];
    check_delta(&deltas[0], 1)?;
    // normalization factors: V_{k+1} γ_k = V_tmp, W_{k+1} γ̃_k = W_tmp
    let mut gammas: Vec<Matrix> = Vec::new();
    let mut gammas_t: Vec<Matrix> = Vec::new();

    for k in 0..n - 1 {
        let dv = ops.apply_d(&vs[k])?;
        let dtw = ops.apply_dt(&ws[k])?;
        let delta = &deltas[k];
        let delta_lu = Lu::factor(delta)?;
        let delta_a = ws[k].transpose() * &dv;
        let alpha = delta_lu.solve(&delta_a)?;
        let alpha_t = delta_lu.solve_transpose(&delta_a.transpose())?;
        let mut v_tmp = &dv - &vs[k] * alpha;
        let mut w_tmp = &dtw - &ws[k] * alpha_t;
        if k > 0 {
            let prev_lu = Lu::factor(&deltas[k - 1])?;
            let beta = prev_lu.solve(&(gammas_t[k - 1].transpose() * delta))?;
            let beta_t =
                prev_lu.solve_transpose(&(gammas[k - 1].transpose() * delta.transpose()))?;
            v_tmp -= &vs[k - 1] * beta;
            w_tmp -= &ws[k - 1] * beta_t;
        }
        // second pass against every earlier block
        for j in 0..=k {
            let lu = Lu::factor(&deltas[j])?;
            let cv = lu.solve(&(ws[j].transpose() * &v_tmp))?;
            let cw = lu.solve_transpose(&(vs[j].transpose() * &w_tmp))?;
            v_tmp -= &vs[j] * cv;
            w_tmp -= &ws[j] * cw;
        }
        let stage = k + 2;
        let (v_next, g) = normalize(&v_tmp, stage, dv.norm(), "trial")?;
        let (w_next, g_t) = normalize(&w_tmp, stage, dtw.norm(), "test")?;
        let delta_next = w_next.transpose() * &v_next;
        check_delta(&delta_next, stage)?;
        vs.push(v_next);
        ws.push(w_next);
        deltas.push(delta_next);
        gammas.push(g);
        gammas_t.push(g_t);
    }
    let v = hstack(&vs.iter().collect::<Vec<_>>());
    let w = hstack(&ws.iter().collect::<Vec<_>>());
    project(ops, n, v, w, Method::Lanczos, Subspace::Standard)
}

/// Builds the bundle requested by `method` and `subspace`.
pub fn build_bundle(
    ops: &ReducedOperators,
    n: usize,
    method: Method,
    subspace: Subspace,
) -> Result<ProjectionBundle> {
    match (method, subspace) {
        (Method::Raw, s) => build_raw_bases(ops, n, s),
        (Method::Lanczos, Subspace::Standard) => blbio(ops, n),
        (Method::Lanczos, s) => Err(Error::Unsupported(format!(
            "Lanczos normalization is implemented for the standard subspaces only, not {s}"
        ))),
    }
}

impl ProjectionBundle {
    /// Projected drift `M̂⁻¹ D̂`.
    pub fn drift(&self) -> Result<Matrix> {
        solve(&self.mhat, &self.dhat)
    }

    /// Projected input `M̂⁻¹ WᵀR`.
    pub fn input(&self) -> Result<Matrix> {
        solve(&self.mhat, &self.wtr)
    }

    pub fn mhat_cond(&self) -> f64 {
        cond2(&self.mhat)
    }

    /// `θ̂_n(t) = LV e^{M̂⁻¹D̂ t} M̂⁻¹ WᵀR` on each grid point.
    pub fn kernel(&self, t_grid: &[f64]) -> Result<Vec<Matrix>> {
        let g = self.drift()?;
        let b = self.input()?;
        t_grid
            .iter()
            .map(|&t| Ok(&self.lv * expm(&(&g * t))? * &b))
            .collect()
    }

    /// `LV (M̂⁻¹D̂)ᵏ M̂⁻¹WᵀR`, the `k`-th derivative of the projected kernel at zero.
    pub fn derivative_at_zero(&self, k: usize) -> Result<Matrix> {
        let g = self.drift()?;
        let mut x = self.input()?;
        for _ in 0..k {
            x = &g * x;
        }
        Ok(&self.lv * x)
    }

    /// Largest block outside the block diagonal of `M̂`, relative to `‖M̂‖`.
    pub fn off_block_diagonal(&self) -> f64 {
        self.band_violation(&self.mhat, 0)
    }

    /// Largest block outside the block tridiagonal of `D̂`, relative to `‖D̂‖`.
    pub fn off_block_tridiagonal(&self) -> f64 {
        self.band_violation(&self.dhat, 1)
    }

    fn band_violation(&self, mat: &Matrix, bandwidth: usize) -> f64 {
        let m = self.m;
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i.abs_diff(j) > bandwidth {
                    worst = worst.max(mat.view((i * m, j * m), (m, m)).norm());
                }
            }
        }
        worst / mat.norm().max(f64::MIN_POSITIVE)
    }
}
