//! Actions of the eliminated-variable drift `D`, the input block `R` and the
//! output block `L` on block vectors `[a; b]` of length `2d`.
//!
//! Vectors live in the range of `blockdiag(P, P)` with `P = I − ΦΦᵀ`. The
//! complement-free realization only ever touches `A` and `Φ`: the fine-block
//! inverse is replaced by
//! `N = Ψ A22⁻¹ Ψᵀ = A⁻¹ − A⁻¹Φ (ΦᵀA⁻¹Φ)⁻¹ ΦᵀA⁻¹`.
//! The explicit realization builds `Ψ` and the dense `D` and exists as a
//! reference for tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse, vstack, Lu, Matrix};
use crate::system::{FullSystem, PartitionBlocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    PsiFree,
    ExplicitPsi,
}

/// Applies `Ψ (A22 + c I)⁻¹ Ψᵀ` using only `A` and `Φ`.
#[derive(Debug, Clone)]
struct ComplementSolver {
    phi: Matrix,
    lu: Lu,
    /// `(A + cI)⁻¹ Φ`
    inv_phi: Matrix,
    /// `(Φᵀ (A + cI)⁻¹ Φ)⁻¹`
    coarse_inv: Matrix,
}

impl ComplementSolver {
    fn new(a: &Matrix, phi: &Matrix, shift: f64) -> Result<Self> {
        let d = a.nrows();
        let shifted = a + Matrix::identity(d, d) * shift;
        let lu = Lu::factor(&shifted)?;
        let inv_phi = lu.solve(phi)?;
        let coarse = phi.transpose() * &inv_phi;
        let coarse_inv = inverse(&coarse).map_err(|_| Error::Breakdown {
            stage: 0,
            msg: "coarse block of the inverse stiffness is numerically singular".into(),
        })?;
        Ok(Self {
            phi: phi.clone(),
            lu,
            inv_phi,
            coarse_inv,
        })
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let y = self.lu.solve(x)?;
        let corr = &self.inv_phi * (&self.coarse_inv * (self.phi.transpose() * &y));
        Ok(y - corr)
    }
}

#[derive(Debug, Clone)]
enum Backend {
    PsiFree {
        a: Matrix,
        phi: Matrix,
        fine_inv: ComplementSolver,
    },
    Explicit {
        blocks: PartitionBlocks,
        embed: Matrix,
        drift: Matrix,
    },
}

/// Operators of the eliminated dynamics in the `2d` embedding.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    mode: OperatorMode,
    d: usize,
    m: usize,
    gamma: f64,
    kbt: f64,
    phi: Matrix,
    backend: Backend,
    rtilde: Matrix,
    ltilde_t: Matrix,
}

/// Shifted resolvent `(D − σI)⁻¹` and its transpose, restricted to the embedded range.
#[derive(Debug, Clone)]
pub struct Resolvent<'a> {
    ops: &'a ReducedOperators,
    sigma: f64,
    inner: ResolventInner,
}

#[derive(Debug, Clone)]
enum ResolventInner {
    PsiFree(ComplementSolver),
    Explicit(Lu),
}

impl ReducedOperators {
    pub fn new(sys: &FullSystem, mode: OperatorMode) -> Result<Self> {
        let (d, m, gamma) = (sys.d(), sys.m(), sys.gamma);
        let backend = match mode {
            OperatorMode::PsiFree => Backend::PsiFree {
                a: sys.a.clone(),
                phi: sys.phi.clone(),
                fine_inv: ComplementSolver::new(&sys.a, &sys.phi, 0.0)?,
            },
            OperatorMode::ExplicitPsi => {
                let blocks = PartitionBlocks::new(sys);
                let embed = blocks.embedding();
                let drift = blocks.d_matrix();
                Backend::Explicit {
                    blocks,
                    embed,
                    drift,
                }
            }
        };
        let mut ops = Self {
            mode,
            d,
            m,
            gamma,
            kbt: sys.kbt,
            phi: sys.phi.clone(),
            backend,
            rtilde: Matrix::zeros(2 * d, m),
            ltilde_t: Matrix::zeros(2 * d, m),
        };
        let (rtilde, ltilde_t) = ops.boundary_blocks()?;
        ops.rtilde = rtilde;
        ops.ltilde_t = ltilde_t;
        Ok(ops)
    }

    fn boundary_blocks(&self) -> Result<(Matrix, Matrix)> {
        let (d, m, gamma) = (self.d, self.m, self.gamma);
        match &self.backend {
            Backend::PsiFree { a, phi, fine_inv } => {
                // Ψ A22⁻¹ A21 = Φ − A⁻¹Φ (ΦᵀA⁻¹Φ)⁻¹
                let top = phi - &fine_inv.inv_phi * &fine_inv.coarse_inv;
                let rtilde = vstack(&[&top, &Matrix::zeros(d, m)]);
                // D⁻ᵀ Lᵀ: the fine-block inverse applied to AΦ reproduces the same top block
                let n_aphi = fine_inv.apply(&(a * phi))?;
                let ltilde_t = vstack(&[&(&n_aphi * -gamma), &(-n_aphi)]);
                Ok((rtilde, ltilde_t))
            }
            Backend::Explicit {
                blocks,
                embed,
                drift,
            } => {
                let r = blocks.r_matrix()?;
                let l = blocks.l_matrix();
                let ltil_t = Lu::factor(drift)?.solve_transpose(&l.transpose())?;
                Ok((embed * r, embed * ltil_t))
            }
        }
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kbt(&self) -> f64 {
        self.kbt
    }

    /// Embedded input block `R̃`, `2d x m`.
    pub fn rtilde(&self) -> &Matrix {
        &self.rtilde
    }

    /// Embedded `D⁻ᵀ Lᵀ`, `2d x m`; the first block of the test basis.
    pub fn ltilde_t(&self) -> &Matrix {
        &self.ltilde_t
    }

    fn check_embedded(&self, x: &Matrix) -> Result<()> {
        if x.nrows() != 2 * self.d {
            return Err(Error::Dimension(format!(
                "block vector has {} rows, expected {}",
                x.nrows(),
                2 * self.d
            )));
        }
        Ok(())
    }

    fn split(&self, x: &Matrix) -> (Matrix, Matrix) {
        let k = x.ncols();
        (
            x.view((0, 0), (self.d, k)).into_owned(),
            x.view((self.d, 0), (self.d, k)).into_owned(),
        )
    }

    fn project(&self, x: &Matrix) -> Matrix {
        x - &self.phi * (self.phi.transpose() * x)
    }

    /// `D̃ [a; b] = [P b; −P A P a − γ P b]`.
    pub fn apply_d(&self, x: &Matrix) -> Result<Matrix> {
        self.check_embedded(x)?;
        match &self.backend {
            Backend::PsiFree { a, .. } => {
                let (top, bot) = self.split(x);
                let pb = self.project(&bot);
                let papa = self.project(&(a * self.project(&top)));
                Ok(vstack(&[&pb, &(-papa - &pb * self.gamma)]))
            }
            Backend::Explicit { embed, drift, .. } => Ok(embed * (drift * (embed.transpose() * x))),
        }
    }

    /// `D̃ᵀ [a; b] = [−P A P b; P a − γ P b]`.
    pub fn apply_dt(&self, x: &Matrix) -> Result<Matrix> {
        self.check_embedded(x)?;
        match &self.backend {
            Backend::PsiFree { a, .. } => {
                let (top, bot) = self.split(x);
                let pb = self.project(&bot);
                let papb = self.project(&(a * &pb));
                Ok(vstack(&[&(-papb), &(self.project(&top) - pb * self.gamma)]))
            }
            Backend::Explicit { embed, drift, .. } => {
                Ok(embed * (drift.transpose() * (embed.transpose() * x)))
            }
        }
    }

    /// Norm bound of the output map, used to judge rounding in its products.
    pub fn output_scale(&self) -> f64 {
        match &self.backend {
            Backend::PsiFree { a, .. } => a.norm() + self.gamma,
            Backend::Explicit { blocks, .. } => blocks.a12.norm() + self.gamma,
        }
    }

    /// `Φᵀ [A, Γ] Ṽ`: the output map applied to embedded vectors, `m x k`.
    pub fn lv_map(&self, v: &Matrix) -> Result<Matrix> {
        self.check_embedded(v)?;
        match &self.backend {
            Backend::PsiFree { a, .. } => {
                let (top, bot) = self.split(v);
                Ok(self.phi.transpose() * (a * top + bot * self.gamma))
            }
            Backend::Explicit { blocks, embed, .. } => {
                Ok(blocks.l_matrix() * (embed.transpose() * v))
            }
        }
    }

    /// `W₁ᵀ Σ W₂` with `Σ = blockdiag(0, 2 kBT γ P)`.
    pub fn noise_form(&self, w1: &Matrix, w2: &Matrix) -> Result<Matrix> {
        self.check_embedded(w1)?;
        self.check_embedded(w2)?;
        let (_, b1) = self.split(w1);
        let (_, b2) = self.split(w2);
        let scale = 2.0 * self.kbt * self.gamma;
        Ok(b1.transpose() * self.project(&b2) * scale)
    }

    /// Factors `(D̃ − σ)` for repeated solves.
    pub fn resolvent(&self, sigma: f64) -> Result<Resolvent<'_>> {
        let inner = match &self.backend {
            Backend::PsiFree { a, phi, .. } => ResolventInner::PsiFree(ComplementSolver::new(
                a,
                phi,
                sigma * (self.gamma + sigma),
            )?),
            Backend::Explicit { drift, .. } => {
                let k = drift.nrows();
                ResolventInner::Explicit(Lu::factor(&(drift - Matrix::identity(k, k) * sigma))?)
            }
        };
        Ok(Resolvent {
            ops: self,
            sigma,
            inner,
        })
    }
}

impl Resolvent<'_> {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `(D̃ − σ)⁻¹ r`.
    pub fn apply(&self, r: &Matrix) -> Result<Matrix> {
        let ops = self.ops;
        ops.check_embedded(r)?;
        match (&self.inner, &ops.backend) {
            (ResolventInner::PsiFree(nc), _) => {
                let (r1, r2) = ops.split(r);
                let (r1, r2) = (ops.project(&r1), ops.project(&r2));
                let s = self.sigma;
                let y1 = -nc.apply(&(&r2 + &r1 * (ops.gamma + s)))?;
                let y2 = r1 + &y1 * s;
                Ok(vstack(&[&y1, &y2]))
            }
            (ResolventInner::Explicit(lu), Backend::Explicit { embed, .. }) => {
                Ok(embed * lu.solve(&(embed.transpose() * r))?)
            }
            _ => unreachable!("resolvent built for a different backend"),
        }
    }

    /// `(D̃ᵀ − σ)⁻¹ r`.
    pub fn apply_t(&self, r: &Matrix) -> Result<Matrix> {
        let ops = self.ops;
        ops.check_embedded(r)?;
        match (&self.inner, &ops.backend) {
            (ResolventInner::PsiFree(nc), _) => {
                let (r1, r2) = ops.split(r);
                let (r1, r2) = (ops.project(&r1), ops.project(&r2));
                let s = self.sigma;
                let y2 = -nc.apply(&(&r1 + &r2 * s))?;
                let y1 = r2 + &y2 * (ops.gamma + s);
                Ok(vstack(&[&y1, &y2]))
            }
            (ResolventInner::Explicit(lu), Backend::Explicit { embed, .. }) => {
                Ok(embed * lu.solve_transpose(&(embed.transpose() * r))?)
            }
            _ => unreachable!("resolvent built for a different backend"),
        }
    }
}
