//! Fluctuation–dissipation consistency of a projected model.
//!
//! Condition A fixes the stationary covariance `kBT·Q̂` of the auxiliary
//! variables from the projected drift and noise through a Lyapunov equation.
//! Condition B, `M̂ Q̂ (LV)ᵀ = WᵀR`, is what makes the noise autocorrelation
//! equal `kBT` times the approximate memory kernel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::krylov::ProjectionBundle;
use crate::linalg::{
    expm, lyapunov_residual, lyapunov_solve, psd_factor, solve, spectral_abscissa, symmetrize,
    Matrix,
};
use crate::moments::MomentSet;
use crate::operators::ReducedOperators;

/// Relative Condition B residual accepted as consistent.
pub const CONDITION_B_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// `z(0)` has covariance `kBT·Q̂`.
    pub qhat: Matrix,
    /// `WᵀΣW`
    pub sigma_tilde: Matrix,
    /// White-noise intensity of the auxiliary forcing, `M̂⁻¹ WᵀΣW M̂⁻ᵀ`.
    pub sigma_hat: Matrix,
    /// `F Fᵀ = Σ̂`, one column per retained positive eigenvalue.
    pub sigma_factor: Matrix,
    pub condition_a_residual: f64,
    pub condition_b_residual: f64,
    /// `‖Q̂ (LV)ᵀ − M̂⁻¹WᵀR‖ / ‖M̂⁻¹WᵀR‖`, the same condition after cancelling `M̂`.
    pub reduced_form_residual: f64,
    pub fdt_pass: bool,
    /// Largest real part of the spectrum of `M̂⁻¹D̂`.
    pub spectral_abscissa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdtReport {
    pub condition_a_residual: f64,
    pub condition_b_residual: f64,
    pub reduced_form_residual: f64,
    pub fdt_pass: bool,
    pub spectral_abscissa: f64,
}

impl NoiseModel {
    pub fn report(&self) -> FdtReport {
        FdtReport {
            condition_a_residual: self.condition_a_residual,
            condition_b_residual: self.condition_b_residual,
            reduced_form_residual: self.reduced_form_residual,
            fdt_pass: self.fdt_pass,
            spectral_abscissa: self.spectral_abscissa,
        }
    }

    /// Refuses models that failed the consistency check unless overridden.
    pub fn gate(&self, allow_violation: bool) -> Result<()> {
        if self.fdt_pass || allow_violation {
            Ok(())
        } else {
            Err(Error::FdtGate {
                residual: self.condition_b_residual,
            })
        }
    }
}

/// Condition B residuals `(‖M̂Q̂LVᵀ − WᵀR‖/‖WᵀR‖, ‖Q̂LVᵀ − M̂⁻¹WᵀR‖/‖M̂⁻¹WᵀR‖)`.
pub fn check_condition_b(pb: &ProjectionBundle, qhat: &Matrix) -> Result<(f64, f64)> {
    let qlv = qhat * pb.lv.transpose();
    let full = (&pb.mhat * &qlv - &pb.wtr).norm() / pb.wtr.norm().max(f64::MIN_POSITIVE);
    let target = solve(&pb.mhat, &pb.wtr)?;
    let reduced = (&qlv - &target).norm() / target.norm().max(f64::MIN_POSITIVE);
    Ok((full, reduced))
}

/// Builds `Σ̂`, solves Condition A for `Q̂` and evaluates Condition B.
pub fn build_noise_model(pb: &ProjectionBundle, ops: &ReducedOperators) -> Result<NoiseModel> {
    let kbt = ops.kbt();
    let sigma_tilde = symmetrize(&ops.noise_form(&pb.w, &pb.w)?).0;
    let x = solve(&pb.mhat, &sigma_tilde)?;
    let sigma_hat = symmetrize(&solve(&pb.mhat, &x.transpose())?).0;
    let drift = pb.drift()?;
    let abscissa = spectral_abscissa(&drift);
    if abscissa >= 0.0 {
        log::warn!("projected drift is not stable (spectral abscissa {abscissa:.3e})");
    }
    let rhs = &sigma_hat / kbt;
    let qhat = lyapunov_solve(&drift, &rhs)?;
    let condition_a_residual = lyapunov_residual(&drift, &qhat, &rhs);
    let sigma_factor = psd_factor(&sigma_hat)?;
    let (condition_b_residual, reduced_form_residual) = check_condition_b(pb, &qhat)?;
    Ok(NoiseModel {
        qhat,
        sigma_tilde,
        sigma_hat,
        sigma_factor,
        condition_a_residual,
        condition_b_residual,
        reduced_form_residual,
        fdt_pass: condition_b_residual <= CONDITION_B_TOL,
        spectral_abscissa: abscissa,
    })
}

/// `kBT·LV e^{M̂⁻¹D̂ t} Q̂ LVᵀ`, the autocorrelation of the projected noise.
pub fn noise_autocorrelation(
    pb: &ProjectionBundle,
    nm: &NoiseModel,
    kbt: f64,
    t_grid: &[f64],
) -> Result<Vec<Matrix>> {
    let g = pb.drift()?;
    let right = &nm.qhat * pb.lv.transpose();
    t_grid
        .iter()
        .map(|&t| Ok(&pb.lv * expm(&(&g * t))? * &right * kbt))
        .collect()
}

/// `WᵀΣW` for the raw standard bases assembled from moments alone.
///
/// Block `(1,1)` is `2kBT·M∞`, the second block row and column vanish, the
/// first column obeys `Σ̃_{i1} = −γΣ̃_{i−1,1} − 2γkBT·M_{i−3}` and every later
/// row follows `Σ̃_{i+1,j} = −γΣ̃_{ij} − Σ̃_{i,j+1} − 2γkBT·M_{i+j−3}`, with
/// `M_{−1} = −M∞`. Rows are filled on widening column ranges so the last row
/// still has every right neighbour it needs.
pub fn sigma_tilde_recurrence(ms: &MomentSet, gamma: f64, kbt: f64, n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Invalid("order must be at least 1".into()));
    }
    let m = ms.m();
    let width = 2 * n - 1;
    let mom = |k: isize| ms.signed(k);
    // blocks[i][j], zero-based
    let mut blocks: Vec<Vec<Matrix>> = vec![vec![Matrix::zeros(m, m); width]; n];
    let mut first_col = vec![Matrix::zeros(m, m); width];
    first_col[0] = &ms.minf * (2.0 * kbt);
    for i in 1..width {
        // 1-based row i+1
        first_col[i] = &first_col[i - 1] * -gamma - mom(i as isize - 2)? * (2.0 * gamma * kbt);
    }
    for j in 0..width {
        blocks[0][j] = first_col[j].transpose();
    }
    // second row stays zero
    for i in 1..n.saturating_sub(1) {
        let row_width = width - i;
        for j in 0..row_width {
            // 1-based: row i+1 is known, compute row i+2
            let k = (i + 1) as isize + (j + 1) as isize - 3;
            let next = &blocks[i][j] * -gamma - &blocks[i][j + 1] - mom(k)? * (2.0 * gamma * kbt);
            blocks[i + 1][j] = next;
        }
    }
    let mut out = Matrix::zeros(n * m, n * m);
    for (i, row) in blocks.iter().take(n).enumerate() {
        for (j, block) in row.iter().take(n).enumerate() {
            out.view_mut((i * m, j * m), (m, m)).copy_from(block);
        }
    }
    Ok(symmetrize(&out).0)
}

/// Closed forms of `WᵀΣW` for orders 3 to 5 on the raw standard bases.
pub fn sigma_tilde_closed_form(ms: &MomentSet, gamma: f64, kbt: f64, n: usize) -> Result<Matrix> {
    if !(3..=5).contains(&n) {
        return Err(Error::Invalid(format!(
            "closed form tabulated for orders 3..=5, got {n}"
        )));
    }
    let m = ms.m();
    let g = gamma;
    let mo = |k: usize| ms.get(k).cloned();
    // upper triangle, 1-based (i, j) with i <= j
    let mut entries: Vec<((usize, usize), Matrix)> = vec![
        ((1, 1), &ms.minf * 2.0),
        ((1, 3), mo(0)? * (-2.0 * g)),
        ((3, 3), mo(2)? * (-2.0 * g)),
    ];
    if n >= 4 {
        entries.push(((1, 4), mo(0)? * (2.0 * g * g)));
        entries.push(((3, 4), mo(3)? * (-2.0 * g)));
        entries.push(((4, 4), mo(3)? * (2.0 * g * g)));
    }
    if n >= 5 {
        entries.push(((1, 5), mo(0)? * (-2.0 * g.powi(3)) - mo(2)? * (2.0 * g)));
        entries.push(((3, 5), mo(4)? * (-2.0 * g)));
        entries.push(((4, 5), mo(4)? * (2.0 * g * g)));
        entries.push((
            (5, 5),
            mo(4)? * (-2.0 * g.powi(3)) - mo(5)? * (2.0 * g * g) - mo(6)? * (2.0 * g),
        ));
    }
    let mut out = Matrix::zeros(n * m, n * m);
    for ((i, j), blk) in entries {
        out.view_mut(((i - 1) * m, (j - 1) * m), (m, m))
            .copy_from(&blk);
        if i != j {
            out.view_mut(((j - 1) * m, (i - 1) * m), (m, m))
                .copy_from(&blk.transpose());
        }
    }
    Ok(out * kbt)
}

/// Closed forms of `Q̃ = D̂Q̂` for orders 3 to 5 on the raw standard bases.
pub fn qtilde_closed_form(n: usize, gamma: f64, m: usize) -> Result<Matrix> {
    let g = gamma;
    let coeffs: Vec<Vec<f64>> = match n {
        3 => vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 2.0 * g, 1.0],
        ],
        4 => vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0, 0.0],
            vec![0.0, 2.0 * g, 1.0, 0.0],
            vec![0.0, -2.0 * g * g, -2.0 * g, -1.0],
        ],
        5 => vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0 * g, 1.0, 0.0, 0.0],
            vec![0.0, -2.0 * g * g, -2.0 * g, -1.0, 0.0],
            vec![0.0, 2.0 * g.powi(3), 4.0 * g * g, 4.0 * g, 1.0],
        ],
        _ => {
            return Err(Error::Invalid(format!(
                "closed form tabulated for orders 3..=5, got {n}"
            )))
        }
    };
    let mut out = Matrix::zeros(n * m, n * m);
    for (i, row) in coeffs.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if *c != 0.0 {
                out.view_mut((i * m, j * m), (m, m))
                    .copy_from(&(Matrix::identity(m, m) * *c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{blbio, build_raw_bases, Subspace};
    use crate::moments::compute_moments_to;
    use crate::operators::OperatorMode;
    use crate::system::{make_synthetic, toy2_fixture, FullSystem, SyntheticSpec};

    fn ops_for(sys: &FullSystem) -> ReducedOperators {
        ReducedOperators::new(sys, OperatorMode::PsiFree).unwrap()
    }

    fn random_system(seed: u64) -> FullSystem {
        let spec = SyntheticSpec {
            d: 24,
            m: 2,
            gamma: 1.5,
            kbt: 0.8,
            lambda_min: 1.0,
            lambda_max: 6.0,
        };
        make_synthetic(&spec, seed).unwrap()
    }

    #[test]
    fn toy2_order_one() {
        let ops = ops_for(&toy2_fixture());
        let pb = build_raw_bases(&ops, 1, Subspace::Standard).unwrap();
        let nm = build_noise_model(&pb, &ops).unwrap();
        assert!((nm.sigma_hat[(0, 0)] - 18.0).abs() < 1e-12);
        assert!((nm.qhat[(0, 0)] - 3.0).abs() < 1e-12);
        assert!(nm.fdt_pass);
    }

    #[test]
    fn toy2_order_two() {
        let ops = ops_for(&toy2_fixture());
        let pb = build_raw_bases(&ops, 2, Subspace::Standard).unwrap();
        let nm = build_noise_model(&pb, &ops).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((&nm.qhat - want).norm() < 1e-10, "{}", nm.qhat);
        assert!((nm.sigma_tilde[(0, 0)] - 2.0 / 9.0).abs() < 1e-14);
        assert!(nm.sigma_tilde[(1, 1)].abs() < 1e-14);
        assert_eq!(nm.sigma_factor.ncols(), 1);
        assert!(nm.fdt_pass);
    }

    #[test]
    fn standard_orders_pass_both_conditions() {
        let sys = random_system(4);
        let ops = ops_for(&sys);
        for n in 1..=5 {
            for pb in [
                build_raw_bases(&ops, n, Subspace::Standard).unwrap(),
                blbio(&ops, n).unwrap(),
            ] {
                let nm = build_noise_model(&pb, &ops).unwrap();
                assert!(nm.condition_a_residual <= 1e-9, "n={n}");
                assert!(
                    nm.fdt_pass,
                    "n={n} {:?} residual {}",
                    pb.method, nm.condition_b_residual
                );
            }
        }
    }

    #[test]
    fn noise_autocorrelation_matches_kernel() {
        let sys = random_system(6);
        let ops = ops_for(&sys);
        let pb = blbio(&ops, 3).unwrap();
        let nm = build_noise_model(&pb, &ops).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        let noise = noise_autocorrelation(&pb, &nm, sys.kbt, &grid).unwrap();
        let kernel = pb.kernel(&grid).unwrap();
        for (a, b) in noise.iter().zip(&kernel) {
            assert!((a - b * sys.kbt).norm() <= 1e-8 * kernel[0].norm() * sys.kbt);
        }
    }

    #[test]
    fn recurrence_and_closed_forms_match_direct() {
        let sys = random_system(8);
        let ops = ops_for(&sys);
        let ms = compute_moments_to(&ops, 12).unwrap();
        for n in 1..=5 {
            let pb = build_raw_bases(&ops, n, Subspace::Standard).unwrap();
            let nm = build_noise_model(&pb, &ops).unwrap();
            let direct = &nm.sigma_tilde;
            let rec = sigma_tilde_recurrence(&ms, sys.gamma, sys.kbt, n).unwrap();
            assert!(
                (&rec - direct).norm() <= 1e-9 * direct.norm(),
                "n={n}\n{rec}\n{direct}"
            );
            if n >= 3 {
                let closed = sigma_tilde_closed_form(&ms, sys.gamma, sys.kbt, n).unwrap();
                assert!(
                    (&closed - direct).norm() <= 1e-9 * direct.norm(),
                    "n={n}\n{closed}\n{direct}"
                );
                let qt = qtilde_closed_form(n, sys.gamma, sys.m()).unwrap();
                let dq = &pb.dhat * &nm.qhat;
                assert!((&dq - &qt).norm() <= 1e-9 * qt.norm(), "n={n}\n{dq}");
            }
        }
    }

    #[test]
    fn gate_blocks_violations() {
        let sys = random_system(2);
        let ops = ops_for(&sys);
        let pb = build_raw_bases(&ops, 2, Subspace::Inverse).unwrap();
        let nm = build_noise_model(&pb, &ops).unwrap();
        assert!(!nm.fdt_pass, "residual {}", nm.condition_b_residual);
        assert!(matches!(nm.gate(false), Err(Error::FdtGate { .. })));
        assert!(nm.gate(true).is_ok());
    }
}
