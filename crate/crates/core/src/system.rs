//! The full linear Langevin system `ẋ = v, v̇ = −A x − γ v + f` together with
//! its coarse basis, synthetic generators, and the explicit complement-basis
//! partition used as a reference in tests.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_matrix_file, write_matrix_file};
use crate::linalg::{
    block_diag, hstack, inverse, qr_full, qr_pivoted, symmetric_eigen, symmetrize, Matrix,
};

/// Column orthonormality accepted as is.
const ORTHO_TOL: f64 = 1e-12;
/// Drift up to this size is repaired by re-orthonormalization.
const ORTHO_REPAIR_TOL: f64 = 1e-8;
/// Relative asymmetry tolerated in a stiffness matrix before rejection.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FullSystem {
    /// Stiffness, symmetric positive definite, `d x d`.
    pub a: Matrix,
    /// Scalar damping rate.
    pub gamma: f64,
    /// Coarse basis with orthonormal columns, `d x m`.
    pub phi: Matrix,
    pub kbt: f64,
}

fn orthonormality_deviation(phi: &Matrix) -> f64 {
    let m = phi.ncols();
    let g = phi.transpose() * phi - Matrix::identity(m, m);
    g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Re-orthonormalizes nearly orthonormal columns, keeping column order.
fn reorthonormalize(phi: &Matrix) -> Result<Matrix> {
    let f = qr_pivoted(phi)?;
    let mut out = Matrix::zeros(phi.nrows(), phi.ncols());
    for (j, &src) in f.perm.iter().enumerate() {
        out.set_column(src, &f.q.column(j));
    }
    Ok(out)
}

impl FullSystem {
    /// Validates and assembles a system.
    ///
    /// `a` must be symmetric positive definite, `phi` must have orthonormal
    /// columns (small drift is repaired with a warning) and `m < d`.
    pub fn new(a: Matrix, phi: Matrix, gamma: f64, kbt: f64) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d {
            return Err(Error::Dimension(format!(
                "stiffness must be square, got {}x{}",
                d,
                a.ncols()
            )));
        }
        if phi.nrows() != d {
            return Err(Error::Dimension(format!(
                "coarse basis has {} rows but stiffness is {d}x{d}",
                phi.nrows()
            )));
        }
        let m = phi.ncols();
        if m == 0 || m >= d {
            return Err(Error::Dimension(format!(
                "need 1 <= m < d, got m={m}, d={d}"
            )));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Invalid(format!(
                "damping must be positive, got {gamma}"
            )));
        }
        if !(kbt.is_finite() && kbt > 0.0) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {kbt}"
            )));
        }
        crate::linalg::check_finite(&a)?;
        crate::linalg::check_finite(&phi)?;

        let (a_sym, skew) = symmetrize(&a);
        if skew > SYMMETRY_TOL * a.norm() {
            return Err(Error::Invalid(format!(
                "stiffness is not symmetric (skew part norm {skew:.3e})"
            )));
        }
        let lowest = *symmetric_eigen(&a_sym)?
            .values
            .last()
            .expect("non-empty spectrum");
        if !(lowest > 0.0) {
            return Err(Error::NotSpd { eigenvalue: lowest });
        }

        let deviation = orthonormality_deviation(&phi);
        let phi = if deviation <= ORTHO_TOL {
            phi
        } else if deviation <= ORTHO_REPAIR_TOL {
            warn!(
                "coarse basis drifted from orthonormality by {deviation:.3e}; re-orthonormalizing"
            );
            reorthonormalize(&phi)?
        } else {
            return Err(Error::NotOrthonormal { deviation });
        };

        Ok(Self {
            a: a_sym,
            gamma,
            phi,
            kbt,
        })
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    /// `P x = x − Φ(Φᵀ x)`, never forming `P`.
    pub fn project_out(&self, x: &Matrix) -> Matrix {
        x - &self.phi * (self.phi.transpose() * x)
    }

    /// Effective stiffness `(Φᵀ A⁻¹ Φ)⁻¹`, the Schur complement of the fine block.
    pub fn effective_stiffness(&self) -> Result<Matrix> {
        let s = self.phi.transpose() * crate::linalg::solve(&self.a, &self.phi)?;
        Ok(symmetrize(&inverse(&s)?).0)
    }

    /// Largest undamped natural frequency `sqrt(λmax(A))`.
    pub fn max_frequency(&self) -> Result<f64> {
        Ok(symmetric_eigen(&self.a)?.values[0].sqrt())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_matrix_file(&dir.join("A.txt"), &self.a)?;
        write_matrix_file(&dir.join("Phi.txt"), &self.phi)
    }
}

/// Loads `A` and `Φ` from matrix text files and validates the result.
pub fn load_system(path_a: &Path, path_phi: &Path, gamma: f64, kbt: f64) -> Result<FullSystem> {
    let a = read_matrix_file(path_a)?;
    let phi = read_matrix_file(path_phi)?;
    FullSystem::new(a, phi, gamma, kbt)
}

/// Parameters of a random test system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub m: usize,
    pub gamma: f64,
    #[serde(default = "default_kbt")]
    pub kbt: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

fn default_kbt() -> f64 {
    1.0
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with `R` normalized to a positive diagonal.
fn haar_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    qr_full(&g).0
}

/// Random system `A = Uᵀ Λ U` with a log-uniform spectrum and an independent random coarse basis.
///
/// The two extreme eigenvalues are pinned to the ends of the range so the
/// stiffness ratio of the fixture is exactly `lambda_max / lambda_min`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<FullSystem> {
    let SyntheticSpec {
        d,
        m,
        gamma,
        kbt,
        lambda_min,
        lambda_max,
    } = *spec;
    if m == 0 || m >= d {
        return Err(Error::Invalid(format!("need 1 <= m < d, got m={m}, d={d}")));
    }
    if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
        return Err(Error::Invalid(format!(
            "spectrum must satisfy 0 < min <= max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (lambda_min.ln(), lambda_max.ln());
    let spectrum: Vec<f64> = (0..d)
        .map(|i| match i {
            0 => lambda_min,
            1 => lambda_max,
            _ => (lo + (hi - lo) * rng.random::<f64>()).exp(),
        })
        .collect();
    let u = haar_orthogonal(&mut rng, d);
    let lambda = Matrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum));
    let a = symmetrize(&(u.transpose() * lambda * &u)).0;
    let phi = haar_orthogonal(&mut rng, d).columns(0, m).into_owned();
    FullSystem::new(a, phi, gamma, kbt)
}

/// Two-dimensional reference system `A = [[2,1],[1,3]]`, `γ = 1`, `Φ = e₁`, `kBT = 1`.
pub fn toy2_fixture() -> FullSystem {
    let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
    let phi = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
    FullSystem::new(a, phi, 1.0, 1.0).expect("toy fixture is valid")
}

/// Blocks of `A` in the basis `[Φ, Ψ]` with an explicit orthonormal complement `Ψ`.
///
/// Only tests and reference computations use this; production paths never form `Ψ`.
#[derive(Debug, Clone)]
pub struct PartitionBlocks {
    pub psi: Matrix,
    pub a11: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub gamma: f64,
}

impl PartitionBlocks {
    pub fn new(sys: &FullSystem) -> Self {
        let (d, m) = (sys.d(), sys.m());
        let q = qr_full(&sys.phi).0;
        let psi = q.columns(m, d - m).into_owned();
        let a_psi = &sys.a * &psi;
        let a_phi = &sys.a * &sys.phi;
        Self {
            a11: symmetrize(&(sys.phi.transpose() * &a_phi)).0,
            a12: sys.phi.transpose() * &a_psi,
            a21: psi.transpose() * &a_phi,
            a22: symmetrize(&(psi.transpose() * &a_psi)).0,
            psi,
            gamma: sys.gamma,
        }
    }

    fn fine_dim(&self) -> usize {
        self.a22.nrows()
    }

    /// Drift of the eliminated variables, `[[0, I], [−A22, −γ I]]`.
    pub fn d_matrix(&self) -> Matrix {
        let k = self.fine_dim();
        let mut dm = Matrix::zeros(2 * k, 2 * k);
        dm.view_mut((0, k), (k, k))
            .copy_from(&Matrix::identity(k, k));
        dm.view_mut((k, 0), (k, k)).copy_from(&(-&self.a22));
        dm.view_mut((k, k), (k, k))
            .copy_from(&(Matrix::identity(k, k) * -self.gamma));
        dm
    }

    /// Output map `[A12, Γ12]`; the damping block vanishes for scalar damping.
    pub fn l_matrix(&self) -> Matrix {
        let m = self.a12.nrows();
        hstack(&[&self.a12, &Matrix::zeros(m, self.fine_dim())])
    }

    /// Input map `[A22⁻¹ A21; 0]`.
    pub fn r_matrix(&self) -> Result<Matrix> {
        let top = crate::linalg::solve(&self.a22, &self.a21)?;
        let m = top.ncols();
        Ok(crate::linalg::vstack(&[
            &top,
            &Matrix::zeros(self.fine_dim(), m),
        ]))
    }

    /// Schur complement `A11 − A12 A22⁻¹ A21`.
    pub fn schur_complement(&self) -> Result<Matrix> {
        Ok(&self.a11 - &self.a12 * crate::linalg::solve(&self.a22, &self.a21)?)
    }

    /// `blockdiag(Ψ, Ψ)`, mapping reduced block vectors into the embedded space.
    pub fn embedding(&self) -> Matrix {
        block_diag(&[&self.psi, &self.psi])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cond2, from_row_major};

    fn spec(d: usize, m: usize) -> SyntheticSpec {
        SyntheticSpec {
            d,
            m,
            gamma: 1.0,
            kbt: 1.0,
            lambda_min: 1.0,
            lambda_max: 100.0,
        }
    }

    #[test]
    fn toy2_blocks() {
        let sys = toy2_fixture();
        let p = PartitionBlocks::new(&sys);
        assert!((p.a11[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((p.a22[(0, 0)] - 3.0).abs() < 1e-15);
        // Ψ = ±e₂, so A12 = ±1 and R, L flip sign together
        assert!((p.a12[(0, 0)].abs() - 1.0).abs() < 1e-15);
        let r = p.r_matrix().unwrap();
        let l = p.l_matrix();
        assert!(((&l * &r)[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let dm = p.d_matrix();
        assert_eq!(dm, from_row_major(2, 2, &[0.0, 1.0, -3.0, -1.0]).unwrap());
    }

    #[test]
    fn smallest_system_is_valid() {
        let sys = make_synthetic(&spec(2, 1), 3).unwrap();
        assert_eq!(PartitionBlocks::new(&sys).a22.shape(), (1, 1));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let s = SyntheticSpec {
            d: 60,
            m: 6,
            ..spec(60, 6)
        };
        assert_eq!(
            make_synthetic(&s, 7).unwrap(),
            make_synthetic(&s, 7).unwrap()
        );
        assert_ne!(
            make_synthetic(&s, 7).unwrap().a,
            make_synthetic(&s, 8).unwrap().a
        );
    }

    #[test]
    fn synthetic_spectrum_sets_conditioning() {
        let s = SyntheticSpec {
            lambda_max: 1e4,
            ..spec(120, 12)
        };
        let sys = make_synthetic(&s, 1).unwrap();
        let c = cond2(&sys.a);
        assert!((1e3..=1e5).contains(&c), "cond {c}");
    }

    #[test]
    fn schur_complement_identity() {
        for seed in 0..5 {
            let sys = make_synthetic(&spec(12, 3), seed).unwrap();
            let p = PartitionBlocks::new(&sys);
            let schur = p.schur_complement().unwrap();
            let eff = sys.effective_stiffness().unwrap();
            assert!((&schur - &eff).norm() <= 1e-10 * eff.norm());
            assert!((&p.a12 - p.a21.transpose()).norm() < 1e-12 * sys.a.norm());
            // damping does not couple coarse and fine variables
            assert!((sys.phi.transpose() * &p.psi).norm() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite_stiffness() {
        let a = from_row_major(2, 2, &[1.0, 0.0, 0.0, -0.1]).unwrap();
        let phi = from_row_major(2, 1, &[1.0, 0.0]).unwrap();
        match FullSystem::new(a, phi, 1.0, 1.0) {
            Err(Error::NotSpd { eigenvalue }) => assert!((eigenvalue + 0.1).abs() < 1e-14),
            other => panic!("expected SPD rejection, got {other:?}"),
        }
    }

    #[test]
    fn repairs_small_orthonormality_drift() {
        let a = from_row_major(2, 2, &[2.0, 1.0, 1.0, 3.0]).unwrap();
        let phi = from_row_major(2, 1, &[1.0 + 1e-9, 0.0]).unwrap();
        let sys = FullSystem::new(a.clone(), phi, 1.0, 1.0).unwrap();
        assert!(orthonormality_deviation(&sys.phi) <= 1e-15);
        let bad = from_row_major(2, 1, &[1.1, 0.0]).unwrap();
        assert!(matches!(
            FullSystem::new(a, bad, 1.0, 1.0),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn rejects_bad_scalars_and_shapes() {
        let sys = toy2_fixture();
        assert!(FullSystem::new(sys.a.clone(), sys.phi.clone(), 0.0, 1.0).is_err());
        assert!(FullSystem::new(sys.a.clone(), sys.phi.clone(), 1.0, -1.0).is_err());
        assert!(FullSystem::new(sys.a.clone(), Matrix::identity(2, 2), 1.0, 1.0).is_err());
        assert!(make_synthetic(&spec(3, 3), 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = toy2_fixture();
        sys.save(dir.path()).unwrap();
        let back = load_system(
            &dir.path().join("A.txt"),
            &dir.path().join("Phi.txt"),
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(back, sys);
    }
}
