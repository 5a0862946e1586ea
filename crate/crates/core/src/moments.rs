//! Kernel moments `M_k = L Dᵏ R` and the correlation-time moment
//! `M∞ = −L D⁻¹ R`, evaluated by repeated operator application.

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix};
use crate::operators::ReducedOperators;
use crate::system::PartitionBlocks;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub minf: Matrix,
    /// `M_0, M_1, …` in order.
    pub moments: Vec<Matrix>,
    /// Largest skew part removed by symmetrization, relative to the product scale.
    pub max_asymmetry: f64,
}

impl MomentSet {
    pub fn m(&self) -> usize {
        self.minf.nrows()
    }

    /// Number of ordinary moments held (`M_0 … M_{len−1}`).
    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Highest matching order `n` the set supports, needing `M_0 … M_{2n−2}`.
    pub fn max_order(&self) -> usize {
        self.moments.len().div_ceil(2)
    }

    pub fn get(&self, k: usize) -> Result<&Matrix> {
        self.moments.get(k).ok_or_else(|| {
            Error::Invalid(format!(
                "moment M_{k} requested but only {} computed",
                self.moments.len()
            ))
        })
    }

    /// `M_k` for `k ≥ 0` and `−M∞` for `k = −1`, the convention that makes
    /// the block Hankel matrices uniform.
    pub fn signed(&self, k: isize) -> Result<Matrix> {
        match k {
            -1 => Ok(-&self.minf),
            k if k >= 0 => self.get(k as usize).cloned(),
            _ => Err(Error::Invalid(format!("no moment with index {k}"))),
        }
    }

    /// Block Hankel matrix with `(i, j)` block `M_{i+j−1+shift}`.
    ///
    /// `shift = 0` gives the projected mass matrix of the standard subspaces,
    /// `shift = 1` the projected drift.
    pub fn block_hankel(&self, n: usize, shift: usize) -> Result<Matrix> {
        let m = self.m();
        let mut h = Matrix::zeros(n * m, n * m);
        for i in 0..n {
            for j in 0..n {
                let blk = self.signed((i + j + shift) as isize - 1)?;
                h.view_mut((i * m, j * m), (m, m)).copy_from(&blk);
            }
        }
        Ok(h)
    }
}

/// Computes `M∞` and `M_0 … M_{count−1}`.
pub fn compute_moments_to(ops: &ReducedOperators, count: usize) -> Result<MomentSet> {
    // skew parts are measured against the size of the factors in each product,
    // since moments like M_1 vanish and their own norm is pure rounding
    let mut worst = 0.0f64;
    let mut finish = |raw: Matrix, scale: f64| {
        let (sym, skew) = symmetrize(&raw);
        worst = worst.max(skew / scale.max(f64::MIN_POSITIVE));
        sym
    };
    let out_scale = ops.output_scale();
    let minf = finish(
        -(ops.ltilde_t().transpose() * ops.rtilde()),
        ops.ltilde_t().norm() * ops.rtilde().norm(),
    );
    let mut moments = Vec::with_capacity(count);
    let mut power = ops.rtilde().clone();
    for k in 0..count {
        if k > 0 {
            power = ops.apply_d(&power)?;
        }
        moments.push(finish(ops.lv_map(&power)?, out_scale * power.norm()));
    }
    debug!("moment asymmetry before symmetrization: {worst:.3e}");
    Ok(MomentSet {
        minf,
        moments,
        max_asymmetry: worst,
    })
}

/// Moments needed for matching order `n`: `M∞` and `M_0 … M_{2n−2}`.
pub fn compute_moments(ops: &ReducedOperators, n: usize) -> Result<MomentSet> {
    if n == 0 {
        return Err(Error::Invalid("order must be at least 1".into()));
    }
    compute_moments_to(ops, 2 * n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentIndex {
    Infinity,
    Order(usize),
}

/// Closed-form moments in terms of the partition blocks, tabulated through `M_7`.
///
/// With `P_j = A12 A22ʲ A21`, for instance `M∞ = γ P_{−2}`, `M_0 = P_{−1}` and
/// `M_6 = −P_2 + 3γ² P_1 − γ⁴ P_0`.
pub fn closed_form_moment(blocks: &PartitionBlocks, idx: MomentIndex) -> Result<Matrix> {
    let g = blocks.gamma;
    let solve = |x: &Matrix| crate::linalg::solve(&blocks.a22, x);
    let p_at = |j: i32| -> Result<Matrix> {
        let mut right = blocks.a21.clone();
        if j >= 0 {
            for _ in 0..j {
                right = &blocks.a22 * right;
            }
        } else {
            for _ in 0..(-j) {
                right = solve(&right)?;
            }
        }
        Ok(&blocks.a12 * right)
    };
    let m = blocks.a12.nrows();
    let out = match idx {
        MomentIndex::Infinity => p_at(-2)? * g,
        MomentIndex::Order(k) => match k {
            0 => p_at(-1)?,
            1 => Matrix::zeros(m, m),
            2 => -p_at(0)?,
            3 => p_at(0)? * g,
            4 => p_at(1)? - p_at(0)? * g.powi(2),
            5 => p_at(1)? * (-2.0 * g) + p_at(0)? * g.powi(3),
            6 => -p_at(2)? + p_at(1)? * (3.0 * g * g) - p_at(0)? * g.powi(4),
            7 => p_at(2)? * (3.0 * g) - p_at(1)? * (4.0 * g.powi(3)) + p_at(0)? * g.powi(5),
            _ => {
                return Err(Error::Invalid(format!(
                    "no closed form tabulated for M_{k}"
                )))
            }
        },
    };
    Ok(symmetrize(&out).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    /// Residual norm relative to the largest participating moment.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub const TOL: f64 = 1e-9;

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.residual <= Self::TOL)
    }
}

/// Linear relations among consecutive moments that hold for scalar damping.
pub fn moment_identities(ms: &MomentSet, gamma: f64) -> IdentityReport {
    let g = gamma;
    let relations: [(&'static str, &[(usize, f64)]); 3] = [
        ("g*M2+M3", &[(2, g), (3, 1.0)]),
        ("g^2*M3+2g*M4+M5", &[(3, g * g), (4, 2.0 * g), (5, 1.0)]),
        (
            "g^3*M4+3g^2*M5+3g*M6+M7",
            &[(4, g.powi(3)), (5, 3.0 * g * g), (6, 3.0 * g), (7, 1.0)],
        ),
    ];
    let m = ms.m();
    let checks = relations
        .iter()
        .filter(|(_, terms)| terms.iter().all(|(k, _)| *k < ms.len()))
        .map(|(name, terms)| {
            let mut sum = Matrix::zeros(m, m);
            let mut scale = 0.0f64;
            for &(k, c) in terms.iter() {
                let t = &ms.moments[k] * c;
                scale = scale.max(t.norm());
                sum += t;
            }
            IdentityCheck {
                name,
                residual: sum.norm() / scale.max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    IdentityReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorMode;
    use crate::system::{make_synthetic, toy2_fixture, SyntheticSpec};

    #[test]
    fn toy2_moments() {
        let ops = ReducedOperators::new(&toy2_fixture(), OperatorMode::PsiFree).unwrap();
        let ms = compute_moments_to(&ops, 9).unwrap();
        let want = [1.0 / 3.0, 0.0, -1.0, 1.0, 2.0, -5.0, -1.0, 16.0, -13.0];
        for (k, w) in want.iter().enumerate() {
            assert!(
                (ms.moments[k][(0, 0)] - w).abs() < 1e-12,
                "M_{k} = {}",
                ms.moments[k]
            );
        }
        assert!((ms.minf[(0, 0)] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn toy2_closed_forms() {
        let blocks = PartitionBlocks::new(&toy2_fixture());
        let want = [1.0 / 3.0, 0.0, -1.0, 1.0, 2.0, -5.0, -1.0, 16.0];
        for (k, w) in want.iter().enumerate() {
            let got = closed_form_moment(&blocks, MomentIndex::Order(k)).unwrap();
            assert!((got[(0, 0)] - w).abs() < 1e-13, "M_{k}");
        }
        let minf = closed_form_moment(&blocks, MomentIndex::Infinity).unwrap();
        assert!((minf[(0, 0)] - 1.0 / 9.0).abs() < 1e-15);
        assert!(closed_form_moment(&blocks, MomentIndex::Order(8)).is_err());
    }

    #[test]
    fn toy2_identities() {
        let ops = ReducedOperators::new(&toy2_fixture(), OperatorMode::PsiFree).unwrap();
        let report = moment_identities(&compute_moments_to(&ops, 8).unwrap(), 1.0);
        assert_eq!(report.checks.len(), 3);
        assert!(
            report.checks.iter().all(|c| c.residual <= 1e-12),
            "{report:?}"
        );
    }

    #[test]
    fn random_system_identities_and_symmetry() {
        let spec = SyntheticSpec {
            d: 30,
            m: 4,
            gamma: 2.0,
            kbt: 1.0,
            lambda_min: 1.0,
            lambda_max: 30.0,
        };
        let sys = make_synthetic(&spec, 5).unwrap();
        let ops = ReducedOperators::new(&sys, OperatorMode::PsiFree).unwrap();
        let ms = compute_moments_to(&ops, 8).unwrap();
        assert!(moment_identities(&ms, sys.gamma).pass());
        assert!(ms.max_asymmetry <= 1e-10);
        assert!(ms.moments[1].norm() <= 1e-12 * ms.moments[0].norm());
    }

    #[test]
    fn hankel_layout() {
        let ops = ReducedOperators::new(&toy2_fixture(), OperatorMode::PsiFree).unwrap();
        let ms = compute_moments(&ops, 2).unwrap();
        assert_eq!(ms.len(), 3);
        let h = ms.block_hankel(2, 0).unwrap();
        assert!((h[(0, 0)] + 1.0 / 9.0).abs() < 1e-15);
        assert!((h[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(h[(1, 1)].abs() < 1e-15);
        let s = ms.block_hankel(2, 1).unwrap();
        assert!((s[(1, 1)] + 1.0).abs() < 1e-14);
        assert!(ms.block_hankel(3, 1).is_err());
    }
}
