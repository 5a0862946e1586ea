//! Two-point Padé (moment matching) approximation of the memory kernel.
//!
//! The block Hankel system fixes the coefficients `B_{n−1} … B_0`; the kernel
//! then solves `θ⁽ⁿ⁾ = Σ_k B_kᵀ θ⁽ⁿ⁻¹⁻ᵏ⁾` with `θ⁽ᵏ⁾(0) = M_k`. Because every
//! moment is symmetric, the left-acting coefficients of that equation are the
//! transposes of the Hankel solution, which itself is right-acting.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{cond2, expm, inverse, qr_pivoted, spectral_abscissa, Matrix};
use crate::moments::MomentSet;

/// Hankel systems worse than this are refused.
pub const MAX_HANKEL_COND: f64 = 1e15;

#[derive(Debug, Clone)]
pub struct MatchedModel {
    pub n: usize,
    pub m: usize,
    /// `B_0 … B_{n−1}` as solved from the Hankel system.
    pub b: Vec<Matrix>,
    /// `C_0 … C_{n−1}` of the numerator polynomial.
    pub c: Vec<Matrix>,
    /// Companion matrix: identity sub-diagonal, last block column `B_{n−1} … B_0`.
    pub bcal: Matrix,
    /// `[C_{n−1}; …; C_0]`.
    pub ccal: Matrix,
    /// `[M_0 … M_{n−1}]`, the output row of the companion realization.
    pub leading_moments: Matrix,
    pub hankel_cond: f64,
    /// Largest real part of the companion spectrum; positive means unstable.
    pub spectral_abscissa: f64,
}

fn companion(coeffs_top_down: &[Matrix], m: usize) -> Matrix {
    let n = coeffs_top_down.len();
    let mut c = Matrix::zeros(n * m, n * m);
    for i in 1..n {
        c.view_mut((i * m, (i - 1) * m), (m, m))
            .copy_from(&Matrix::identity(m, m));
    }
    for (i, blk) in coeffs_top_down.iter().enumerate() {
        c.view_mut((i * m, (n - 1) * m), (m, m)).copy_from(blk);
    }
    c
}

/// 2-norm condition number of the order-`n` block Hankel matrix.
pub fn hankel_cond(ms: &MomentSet, n: usize) -> Result<f64> {
    Ok(cond2(&ms.block_hankel(n, 0)?))
}

/// `(order, cond)` rows for each requested order.
pub fn cond_table(
    ms: &MomentSet,
    orders: impl IntoIterator<Item = usize>,
) -> Result<Vec<(usize, f64)>> {
    orders
        .into_iter()
        .map(|n| Ok((n, hankel_cond(ms, n)?)))
        .collect()
}

/// Solves the block Hankel system for order `n` and assembles the companion pair.
pub fn match_moments(ms: &MomentSet, n: usize) -> Result<MatchedModel> {
    if n == 0 {
        return Err(Error::Invalid("order must be at least 1".into()));
    }
    let m = ms.m();
    let hankel = ms.block_hankel(n, 0)?;
    let cond = cond2(&hankel);
    if !(cond <= MAX_HANKEL_COND) {
        return Err(Error::IllConditioned { cond });
    }
    if n >= 6 {
        warn!("moment matching at order {n}: Hankel condition number {cond:.3e}");
    }
    let mut rhs = Matrix::zeros(n * m, m);
    for i in 0..n {
        rhs.view_mut((i * m, 0), (m, m))
            .copy_from(ms.get(n - 1 + i)?);
    }
    let x = qr_pivoted(&hankel)?.solve(&rhs)?;
    // x holds [B_{n−1}; …; B_0] top to bottom
    let top_down: Vec<Matrix> = (0..n)
        .map(|i| x.view((i * m, 0), (m, m)).into_owned())
        .collect();
    let b: Vec<Matrix> = top_down.iter().rev().cloned().collect();

    let mut c = Vec::with_capacity(n);
    for j in 0..n {
        let mut cj = ms.get(j)?.clone();
        for (i, bi) in b.iter().take(j).enumerate() {
            cj -= bi.transpose() * ms.get(j - 1 - i)?;
        }
        c.push(cj);
    }
    let mut ccal = Matrix::zeros(n * m, m);
    for (row, cj) in c.iter().rev().enumerate() {
        ccal.view_mut((row * m, 0), (m, m)).copy_from(cj);
    }
    let mut leading = Matrix::zeros(m, n * m);
    for k in 0..n {
        leading.view_mut((0, k * m), (m, m)).copy_from(ms.get(k)?);
    }
    let bcal = companion(&top_down, m);
    let abscissa = spectral_abscissa(&bcal);
    if abscissa >= 0.0 {
        warn!("matched model of order {n} is not stable (spectral abscissa {abscissa:.3e})");
    }
    Ok(MatchedModel {
        n,
        m,
        b,
        c,
        bcal,
        ccal,
        leading_moments: leading,
        hankel_cond: cond,
        spectral_abscissa: abscissa,
    })
}

impl MatchedModel {
    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa < 0.0
    }

    /// Companion of the left-acting coefficients: last block column `B_{n−1}ᵀ … B_0ᵀ`.
    pub fn observer_matrix(&self) -> Matrix {
        let top_down: Vec<Matrix> = self.b.iter().rev().map(|b| b.transpose()).collect();
        companion(&top_down, self.m)
    }

    fn first_block(&self) -> Matrix {
        let mut e = Matrix::zeros(self.n * self.m, self.m);
        e.view_mut((0, 0), (self.m, self.m))
            .copy_from(&Matrix::identity(self.m, self.m));
        e
    }

    /// `θ_n(t) = [0 … I] e^{𝔅t} Ccal` on each grid point.
    pub fn kernel(&self, t_grid: &[f64]) -> Result<Vec<Matrix>> {
        let obs = self.observer_matrix();
        let start = (self.n - 1) * self.m;
        t_grid
            .iter()
            .map(|&t| Ok(expm(&(&obs * t))?.rows(start, self.m) * &self.ccal))
            .collect()
    }

    /// The same kernel from the `n`-th order initial value problem.
    pub fn kernel_ode(&self, t_grid: &[f64]) -> Result<Vec<Matrix>> {
        let (n, m) = (self.n, self.m);
        let mut f = Matrix::zeros(n * m, n * m);
        for i in 0..n - 1 {
            f.view_mut((i * m, (i + 1) * m), (m, m))
                .copy_from(&Matrix::identity(m, m));
        }
        // θ⁽ⁿ⁾ = Σ_k B_kᵀ θ⁽ⁿ⁻¹⁻ᵏ⁾
        for (k, bk) in self.b.iter().enumerate() {
            let col = n - 1 - k;
            f.view_mut(((n - 1) * m, col * m), (m, m))
                .copy_from(&bk.transpose());
        }
        let y0 = self.leading_moments.transpose();
        t_grid
            .iter()
            .map(|&t| Ok(expm(&(&f * t))?.rows(0, m) * &y0))
            .collect()
    }

    /// `dᵏθ_n/dtᵏ(0) = [M_0 … M_{n−1}] Bcalᵏ E_1`.
    pub fn derivative_at_zero(&self, k: usize) -> Matrix {
        let mut v = self.first_block();
        for _ in 0..k {
            v = &self.bcal * v;
        }
        &self.leading_moments * v
    }

    /// `∫₀^∞ θ_n = −[M_0 … M_{n−1}] Bcal⁻¹ E_1`, defined only for a stable companion.
    pub fn integral(&self) -> Result<Option<Matrix>> {
        if !self.is_stable() {
            return Ok(None);
        }
        Ok(Some(
            -(&self.leading_moments * inverse(&self.bcal)? * self.first_block()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::compute_moments_to;
    use crate::operators::{OperatorMode, ReducedOperators};
    use crate::system::{make_synthetic, toy2_fixture, SyntheticSpec};

    fn toy2_moments() -> MomentSet {
        let ops = ReducedOperators::new(&toy2_fixture(), OperatorMode::PsiFree).unwrap();
        compute_moments_to(&ops, 9).unwrap()
    }

    #[test]
    fn toy2_order_two_coefficients() {
        let mm = match_moments(&toy2_moments(), 2).unwrap();
        // [[−1/9, 1/3], [1/3, 0]] [B1; B0] = [0; −1]
        assert!((mm.b[1][(0, 0)] + 3.0).abs() < 1e-12);
        assert!((mm.b[0][(0, 0)] + 1.0).abs() < 1e-12);
        assert!((mm.c[0][(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        // C1 = −B1 M∞
        assert!((mm.c[1][(0, 0)] - 3.0 / 9.0).abs() < 1e-12);
        assert_eq!(mm.bcal[(1, 0)], 1.0);
        assert_eq!(mm.bcal[(0, 0)], 0.0);
    }

    #[test]
    fn toy2_order_one_is_single_exponential() {
        let mm = match_moments(&toy2_moments(), 1).unwrap();
        let grid: Vec<f64> = (0..31).map(|i| 0.1 * i as f64).collect();
        for (t, th) in grid.iter().zip(mm.kernel(&grid).unwrap()) {
            assert!((th[(0, 0)] - (-3.0 * t).exp() / 3.0).abs() < 1e-13);
        }
        assert!((mm.integral().unwrap().unwrap()[(0, 0)] - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn evaluation_paths_agree_and_reproduce_moments() {
        let spec = SyntheticSpec {
            d: 16,
            m: 2,
            gamma: 2.0,
            kbt: 1.0,
            lambda_min: 1.0,
            lambda_max: 4.0,
        };
        let sys = make_synthetic(&spec, 3).unwrap();
        let ops = ReducedOperators::new(&sys, OperatorMode::PsiFree).unwrap();
        let ms = compute_moments_to(&ops, 9).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| 0.05 * i as f64).collect();
        for n in 1..=4 {
            let mm = match_moments(&ms, n).unwrap();
            let a = mm.kernel(&grid).unwrap();
            let b = mm.kernel_ode(&grid).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() <= 1e-8 * ms.moments[0].norm(), "n={n}");
            }
            assert!((&a[0] - &ms.moments[0]).norm() <= 1e-12 * ms.moments[0].norm());
            for k in 0..=2 * n - 2 {
                let got = mm.derivative_at_zero(k);
                assert!(
                    (&got - &ms.moments[k]).norm() <= 1e-8 * ms.moments[k].norm().max(1.0),
                    "n={n} k={k}"
                );
            }
            if let Some(int) = mm.integral().unwrap() {
                assert!((int - &ms.minf).norm() <= 1e-6 * ms.minf.norm(), "n={n}");
            }
        }
    }

    #[test]
    fn cond_table_grows() {
        let ms = toy2_moments();
        let table = cond_table(&ms, 1..=3).unwrap();
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|(_, c)| *c >= 1.0));
    }

    #[test]
    fn singular_hankel_is_refused() {
        // toy2 has a two-dimensional eliminated state, so order 3 is rank deficient
        match match_moments(&toy2_moments(), 3) {
            Err(Error::IllConditioned { cond }) => assert!(cond > MAX_HANKEL_COND),
            other => panic!("expected ill-conditioning error, got {other:?}"),
        }
    }
}
