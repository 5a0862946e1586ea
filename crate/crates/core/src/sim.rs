//! Stochastic simulation of the full Langevin model and of the reduced
//! extended `(q, p, z)` model, with ensemble estimators.
//!
//! Both models are linear, so every supported scheme is a fixed one-step map
//! `y ← S y + K ξ` with standard normal `ξ`. Members run in parallel, each on
//! its own ChaCha stream selected by member index.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdt::NoiseModel;
use crate::kernel::{full_drift, propagate};
use crate::krylov::ProjectionBundle;
use crate::linalg::{
    block_diag, expm, inverse, lyapunov_solve, psd_factor, spectral_abscissa, spectral_radius,
    symmetrize, Matrix,
};
use crate::system::FullSystem;

/// `dt·ρ(F)` may not exceed this, `ρ(F)` being the largest drift eigenvalue magnitude.
pub const STABILITY_LIMIT: f64 = 0.5;
/// Default step as a fraction of the stability limit.
pub const DT_SAFETY: f64 = 0.1;
pub const DEFAULT_BURN_IN: f64 = 0.2;
/// Width of acceptance bands, in standard errors.
pub const SE_BANDS: f64 = 3.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Explicit Euler–Maruyama on the whole state.
    #[default]
    EulerMaruyama,
    /// Euler–Maruyama on `(q, p)`; the auxiliary block is advanced by its exact
    /// Ornstein–Uhlenbeck step with `p` frozen over the step.
    ExponentialAux,
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN
}

fn default_record_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Time step; derived from the stability guard when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub steps: usize,
    pub ensemble: usize,
    /// Fraction of each trajectory discarded before averaging.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Stride between stored `(q, p)` samples.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub allow_fdt_violation: bool,
    /// Also average the outer product of the whole state.
    #[serde(default)]
    pub state_covariance: bool,
}

impl SimParams {
    pub fn new(steps: usize, ensemble: usize) -> Self {
        SimParams {
            dt: None,
            steps,
            ensemble,
            burn_in: DEFAULT_BURN_IN,
            record_every: default_record_every(),
            integrator: Integrator::EulerMaruyama,
            allow_fdt_violation: false,
            state_covariance: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.ensemble == 0 || self.record_every == 0 {
            return Err(Error::Invalid(
                "steps, ensemble and record_every must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Invalid(format!(
                "burn-in fraction {} not in [0, 1)",
                self.burn_in
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Invalid(format!("time step {dt} must be positive")));
            }
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in * self.steps as f64).floor() as usize
    }
}

/// Reduced extended model `q̇ = p`, `ṗ = −Aeff q − γp − LV z + f₁`, `ż = G z + b p + f̂`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub n: usize,
    pub m: usize,
    /// Schur complement of `A` onto the coarse space.
    pub aeff: Matrix,
    pub gamma: f64,
    pub lv: Matrix,
    /// `G = M̂⁻¹D̂`
    pub drift: Matrix,
    /// `b = M̂⁻¹WᵀR`
    pub input: Matrix,
    pub qhat: Matrix,
    pub sigma_hat: Matrix,
    pub sigma_factor: Matrix,
    pub kbt: f64,
    pub fdt_pass: bool,
    pub condition_b_residual: f64,
}

impl ReducedModel {
    pub fn new(sys: &FullSystem, pb: &ProjectionBundle, noise: &NoiseModel) -> Result<Self> {
        Ok(ReducedModel {
            n: pb.n,
            m: pb.m,
            aeff: sys.effective_stiffness()?,
            gamma: sys.gamma,
            lv: pb.lv.clone(),
            drift: pb.drift()?,
            input: pb.input()?,
            qhat: noise.qhat.clone(),
            sigma_hat: noise.sigma_hat.clone(),
            sigma_factor: noise.sigma_factor.clone(),
            kbt: sys.kbt,
            fdt_pass: noise.fdt_pass,
            condition_b_residual: noise.condition_b_residual,
        })
    }

    /// Dimension of the extended state `(q, p, z)`.
    pub fn dim(&self) -> usize {
        2 * self.m + self.n * self.m
    }

    pub fn extended_drift(&self) -> Matrix {
        let (m, k) = (self.m, self.n * self.m);
        let mut f = Matrix::zeros(2 * m + k, 2 * m + k);
        f.view_mut((0, m), (m, m))
            .copy_from(&Matrix::identity(m, m));
        f.view_mut((m, 0), (m, m)).copy_from(&(-&self.aeff));
        f.view_mut((m, m), (m, m))
            .copy_from(&(Matrix::identity(m, m) * -self.gamma));
        f.view_mut((m, 2 * m), (m, k)).copy_from(&(-&self.lv));
        f.view_mut((2 * m, m), (k, m)).copy_from(&self.input);
        f.view_mut((2 * m, 2 * m), (k, k)).copy_from(&self.drift);
        f
    }

    /// White-noise intensity of the extended state: `blockdiag(0, 2kBTγ I, Σ̂)`.
    pub fn noise_intensity(&self) -> Matrix {
        let m = self.m;
        block_diag(&[
            &Matrix::zeros(m, m),
            &(Matrix::identity(m, m) * (2.0 * self.kbt * self.gamma)),
            &self.sigma_hat,
        ])
    }

    /// `kBT·blockdiag(Aeff⁻¹, I, Q̂)`, the stationary covariance when the model is FDT-consistent.
    pub fn equilibrium_covariance(&self) -> Result<Matrix> {
        let m = self.m;
        Ok(block_diag(&[&inverse(&self.aeff)?, &Matrix::identity(m, m), &self.qhat]) * self.kbt)
    }

    /// Stationary covariance from a Lyapunov solve on the extended drift.
    pub fn stationary_covariance(&self) -> Result<Matrix> {
        lyapunov_solve(&self.extended_drift(), &self.noise_intensity())
    }

    /// `⟨p(t+τ) p(t)ᵀ⟩` of the stationary reduced model.
    pub fn exact_vacf(&self, t_grid: &[f64]) -> Result<Vec<Matrix>> {
        let m = self.m;
        let cov = self.stationary_covariance()?;
        let start = cov.columns(m, m).into_owned();
        let states = propagate(&self.extended_drift(), &start, t_grid)?;
        Ok(states.iter().map(|s| s.rows(m, m).into_owned()).collect())
    }
}

/// One-step map `y ← S y + K ξ` together with the initial law and observables.
#[derive(Debug, Clone)]
pub struct LinearScheme {
    pub dt: f64,
    pub step: Matrix,
    pub noise: Matrix,
    /// `y(0) = init·ξ`
    pub init: Matrix,
    pub obs_q: Matrix,
    pub obs_p: Matrix,
}

fn guard(drift: &Matrix, dt: Option<f64>, what: &str) -> Result<f64> {
    let rho = spectral_radius(drift);
    let dt = dt.unwrap_or(DT_SAFETY * STABILITY_LIMIT / rho);
    if dt * rho > STABILITY_LIMIT {
        return Err(Error::StabilityGuard(format!(
            "{what}: dt = {dt:.3e} times drift frequency {rho:.6e} is {:.3e} > {STABILITY_LIMIT}",
            dt * rho
        )));
    }
    Ok(dt)
}

/// The discrete map must be contractive whenever the continuous drift is stable.
fn check_step_map(drift: &Matrix, step: &Matrix, dt: f64) -> Result<()> {
    let abscissa = spectral_abscissa(drift);
    if abscissa >= 0.0 {
        warn!("drift is unstable (spectral abscissa {abscissa:.3e}); trajectories will not be stationary");
        return Ok(());
    }
    let r = spectral_radius(step);
    if r >= 1.0 {
        return Err(Error::StabilityGuard(format!(
            "one-step map at dt = {dt:.3e} has spectral radius {r:.6e} >= 1"
        )));
    }
    Ok(())
}

/// Euler–Maruyama scheme for the full model on `(x, v)`.
pub fn full_scheme(sys: &FullSystem, dt: Option<f64>) -> Result<LinearScheme> {
    let d = sys.d();
    let f = full_drift(sys);
    let dt = guard(&f, dt, "full model")?;
    let step = Matrix::identity(2 * d, 2 * d) + &f * dt;
    check_step_map(&f, &step, dt)?;
    let mut noise = Matrix::zeros(2 * d, d);
    noise
        .view_mut((d, 0), (d, d))
        .copy_from(&(Matrix::identity(d, d) * (2.0 * sys.kbt * sys.gamma * dt).sqrt()));
    let init = block_diag(&[
        &psd_factor(&(inverse(&sys.a)? * sys.kbt))?,
        &(Matrix::identity(d, d) * sys.kbt.sqrt()),
    ]);
    let zero = Matrix::zeros(sys.m(), d);
    let phit = sys.phi.transpose();
    Ok(LinearScheme {
        dt,
        step,
        noise,
        init,
        obs_q: crate::linalg::hstack(&[&phit, &zero]),
        obs_p: crate::linalg::hstack(&[&zero, &phit]),
    })
}

/// `(∫₀^h e^{Gs} ds, ∫₀^h e^{Gs} Σ e^{Gᵀs} ds)` from two block exponentials.
fn exact_ou_step(g: &Matrix, sigma: &Matrix, h: f64) -> Result<(Matrix, Matrix, Matrix)> {
    let k = g.nrows();
    let mut a = Matrix::zeros(2 * k, 2 * k);
    a.view_mut((0, 0), (k, k)).copy_from(g);
    a.view_mut((0, k), (k, k))
        .copy_from(&Matrix::identity(k, k));
    let ea = expm(&(a * h))?;
    let e = ea.view((0, 0), (k, k)).into_owned();
    let integral = ea.view((0, k), (k, k)).into_owned();
    let mut b = Matrix::zeros(2 * k, 2 * k);
    b.view_mut((0, 0), (k, k)).copy_from(&(-g));
    b.view_mut((0, k), (k, k)).copy_from(sigma);
    b.view_mut((k, k), (k, k)).copy_from(&g.transpose());
    let eb = expm(&(b * h))?;
    let cov = eb.view((k, k), (k, k)).transpose() * eb.view((0, k), (k, k));
    Ok((e, integral, symmetrize(&cov).0))
}

/// Scheme for the reduced model; refuses FDT-violating models unless overridden.
pub fn reduced_scheme(
    rm: &ReducedModel,
    dt: Option<f64>,
    integrator: Integrator,
    allow_violation: bool,
) -> Result<LinearScheme> {
    if !rm.fdt_pass {
        if !allow_violation {
            return Err(Error::FdtGate {
                residual: rm.condition_b_residual,
            });
        }
        warn!(
            "simulating a model that fails the FDT check (residual {:.3e})",
            rm.condition_b_residual
        );
    }
    let (m, k) = (rm.m, rm.n * rm.m);
    let dim = rm.dim();
    let f = rm.extended_drift();
    let r = rm.sigma_factor.ncols();
    let p_noise = Matrix::identity(m, m) * (2.0 * rm.kbt * rm.gamma);
    let (dt, step, noise) = match integrator {
        Integrator::EulerMaruyama => {
            let dt = guard(&f, dt, "reduced model")?;
            let step = Matrix::identity(dim, dim) + &f * dt;
            let mut noise = Matrix::zeros(dim, m + r);
            noise
                .view_mut((m, 0), (m, m))
                .copy_from(&(&p_noise * dt).map(f64::sqrt));
            noise
                .view_mut((2 * m, m), (k, r))
                .copy_from(&(&rm.sigma_factor * dt.sqrt()));
            (dt, step, noise)
        }
        Integrator::ExponentialAux => {
            let coarse = f.view((0, 0), (2 * m, 2 * m)).into_owned();
            let dt = guard(&coarse, dt, "reduced model (coarse block)")?;
            let (e, integral, cov) = exact_ou_step(&rm.drift, &rm.sigma_hat, dt)?;
            let mut step = Matrix::identity(dim, dim) + &f * dt;
            step.view_mut((2 * m, 0), (k, m)).fill(0.0);
            step.view_mut((2 * m, m), (k, m))
                .copy_from(&(&integral * &rm.input));
            step.view_mut((2 * m, 2 * m), (k, k)).copy_from(&e);
            let aux = psd_factor(&cov)?;
            let mut noise = Matrix::zeros(dim, m + aux.ncols());
            noise
                .view_mut((m, 0), (m, m))
                .copy_from(&(&p_noise * dt).map(f64::sqrt));
            noise.view_mut((2 * m, m), (k, aux.ncols())).copy_from(&aux);
            (dt, step, noise)
        }
    };
    check_step_map(&f, &step, dt)?;
    let aux_init = match psd_factor(&(&rm.qhat * rm.kbt)) {
        Ok(fz) => fz,
        Err(_) => {
            warn!("auxiliary covariance is indefinite; starting z at zero");
            Matrix::zeros(k, 0)
        }
    };
    let init = block_diag(&[
        &psd_factor(&(inverse(&rm.aeff)? * rm.kbt))?,
        &(Matrix::identity(m, m) * rm.kbt.sqrt()),
        &aux_init,
    ]);
    let mut obs_q = Matrix::zeros(m, dim);
    obs_q
        .view_mut((0, 0), (m, m))
        .copy_from(&Matrix::identity(m, m));
    let mut obs_p = Matrix::zeros(m, dim);
    obs_p
        .view_mut((0, m), (m, m))
        .copy_from(&Matrix::identity(m, m));
    Ok(LinearScheme {
        dt,
        step,
        noise,
        init,
        obs_q,
        obs_p,
    })
}

/// Per-member output of a run.
#[derive(Debug, Clone)]
pub struct MemberRecord {
    /// `q`, `p` after burn-in every `record_every` steps, row-major by sample.
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Late-window averages of `q qᵀ`, `p pᵀ` and optionally the whole state.
    pub qq: Matrix,
    pub pp: Matrix,
    pub state: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    pub ensemble: usize,
    pub seed: u64,
    pub burn_in_steps: usize,
    pub record_every: usize,
    pub m: usize,
    pub members: Vec<MemberRecord>,
}

fn row_major(a: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        out.extend(a.row(i).iter());
    }
    out
}

fn matvec(a: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (row, yi) in a.chunks_exact(cols).zip(y.iter_mut()) {
        *yi += row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>();
    }
}

fn add_outer(acc: &mut [f64], x: &[f64]) {
    let n = x.len();
    for i in 0..n {
        for j in 0..n {
            acc[i * n + j] += x[i] * x[j];
        }
    }
}

fn run_member(
    s: &LinearScheme,
    params: &SimParams,
    seed: u64,
    member: usize,
) -> Result<MemberRecord> {
    let dim = s.step.nrows();
    let m = s.obs_q.nrows();
    let (step, noise, init) = (row_major(&s.step), row_major(&s.noise), row_major(&s.init));
    let (oq, op) = (row_major(&s.obs_q), row_major(&s.obs_p));
    let (r, r0) = (s.noise.ncols(), s.init.ncols());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    let mut xi = vec![0.0; r.max(r0)];
    let mut y = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    for v in xi.iter_mut().take(r0) {
        *v = StandardNormal.sample(&mut rng);
    }
    matvec(&init, r0, &xi[..r0], &mut y);

    let burn = params.burn_in_steps();
    let window = params.steps - burn;
    let mut q = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut qq = vec![0.0; m * m];
    let mut pp = vec![0.0; m * m];
    let mut state = params.state_covariance.then(|| vec![0.0; dim * dim]);
    let samples = window / params.record_every;
    let mut q_rec = Vec::with_capacity(samples * m);
    let mut p_rec = Vec::with_capacity(samples * m);

    for k in 1..=params.steps {
        for v in xi.iter_mut().take(r) {
            *v = StandardNormal.sample(&mut rng);
        }
        next.fill(0.0);
        matvec(&step, dim, &y, &mut next);
        matvec(&noise, r, &xi[..r], &mut next);
        std::mem::swap(&mut y, &mut next);
        if k % 1024 == 0 && !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { member, step: k });
        }
        if k <= burn {
            continue;
        }
        q.fill(0.0);
        p.fill(0.0);
        matvec(&oq, dim, &y, &mut q);
        matvec(&op, dim, &y, &mut p);
        add_outer(&mut qq, &q);
        add_outer(&mut pp, &p);
        if let Some(acc) = state.as_mut() {
            add_outer(acc, &y);
        }
        if (k - burn).is_multiple_of(params.record_every) {
            q_rec.extend_from_slice(&q);
            p_rec.extend_from_slice(&p);
        }
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged {
            member,
            step: params.steps,
        });
    }
    let scale = 1.0 / window.max(1) as f64;
    let avg = |acc: Vec<f64>, n: usize| Matrix::from_row_slice(n, n, &acc) * scale;
    Ok(MemberRecord {
        q: q_rec,
        p: p_rec,
        qq: avg(qq, m),
        pp: avg(pp, m),
        state: state.map(|acc| avg(acc, dim)),
    })
}

/// Runs an ensemble of a linear scheme; bit-identical for identical inputs.
pub fn run_ensemble(scheme: &LinearScheme, params: &SimParams, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    let members = (0..params.ensemble)
        .into_par_iter()
        .map(|i| run_member(scheme, params, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        dt: scheme.dt,
        steps: params.steps,
        ensemble: params.ensemble,
        seed,
        burn_in_steps: params.burn_in_steps(),
        record_every: params.record_every,
        m: scheme.obs_q.nrows(),
        members,
    })
}

pub fn simulate_full(sys: &FullSystem, params: &SimParams, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    run_ensemble(&full_scheme(sys, params.dt)?, params, seed)
}

pub fn simulate_reduced(rm: &ReducedModel, params: &SimParams, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    let scheme = reduced_scheme(rm, params.dt, params.integrator, params.allow_fdt_violation)?;
    run_ensemble(&scheme, params, seed)
}

/// Ensemble mean of a matrix statistic with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate {
    pub mean: Matrix,
    pub se: Matrix,
}

impl MatrixEstimate {
    /// Standard error from the spread of per-member values.
    pub fn from_members(samples: &[Matrix]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Invalid("no ensemble members".into()))?;
        let k = samples.len() as f64;
        let mean = samples
            .iter()
            .fold(Matrix::zeros(first.nrows(), first.ncols()), |a, s| a + s)
            / k;
        let mut var = Matrix::zeros(first.nrows(), first.ncols());
        for s in samples {
            var += (s - &mean).map(|v| v * v);
        }
        let denom = (k - 1.0).max(1.0) * k;
        Ok(MatrixEstimate {
            mean,
            se: var.map(|v| (v / denom).sqrt()),
        })
    }

    /// Largest `|mean − target| / se` over the entries.
    pub fn max_deviation(&self, target: &Matrix) -> f64 {
        self.mean
            .iter()
            .zip(target.iter())
            .zip(self.se.iter())
            .map(|((x, t), s)| {
                let gap = (x - t).abs();
                if gap == 0.0 {
                    0.0
                } else {
                    gap / s
                }
            })
            .fold(0.0, f64::max)
    }

    /// Every entry lies within `bands` standard errors of the target.
    pub fn within(&self, target: &Matrix, bands: f64) -> bool {
        self.max_deviation(target) <= bands
    }
}

impl Trajectory {
    pub fn covariance_q(&self) -> Result<MatrixEstimate> {
        let s: Vec<Matrix> = self.members.iter().map(|r| r.qq.clone()).collect();
        MatrixEstimate::from_members(&s)
    }

    pub fn covariance_p(&self) -> Result<MatrixEstimate> {
        let s: Vec<Matrix> = self.members.iter().map(|r| r.pp.clone()).collect();
        MatrixEstimate::from_members(&s)
    }

    /// Covariance of the whole simulated state, if it was accumulated.
    pub fn covariance_state(&self) -> Result<Option<MatrixEstimate>> {
        let s: Option<Vec<Matrix>> = self.members.iter().map(|r| r.state.clone()).collect();
        s.map(|s| MatrixEstimate::from_members(&s)).transpose()
    }

    /// Number of stored samples per member.
    pub fn samples(&self) -> usize {
        self.members
            .first()
            .map_or(0, |r| r.p.len() / self.m.max(1))
    }

    pub fn sample_interval(&self) -> f64 {
        self.dt * self.record_every as f64
    }
}

#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub lags: Vec<f64>,
    pub mean: Vec<Matrix>,
    pub se: Vec<Matrix>,
}

/// `C(τ) = ⟨p(t+τ) p(t)ᵀ⟩` for `τ = 0 … max_lag` stored samples.
pub fn vacf(traj: &Trajectory, max_lag: usize) -> Result<CorrelationEstimate> {
    let len = traj.samples();
    if max_lag >= len {
        return Err(Error::Invalid(format!(
            "max lag {max_lag} needs more than the {len} samples in the stationary window"
        )));
    }
    let m = traj.m;
    let per_member: Vec<Vec<Matrix>> = traj
        .members
        .par_iter()
        .map(|rec| {
            (0..=max_lag)
                .map(|lag| {
                    let mut c = Matrix::zeros(m, m);
                    for t in 0..len - lag {
                        let later = &rec.p[(t + lag) * m..(t + lag + 1) * m];
                        let now = &rec.p[t * m..(t + 1) * m];
                        for i in 0..m {
                            for j in 0..m {
                                c[(i, j)] += later[i] * now[j];
                            }
                        }
                    }
                    c / (len - lag) as f64
                })
                .collect()
        })
        .collect();
    let mut mean = Vec::with_capacity(max_lag + 1);
    let mut se = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let s: Vec<Matrix> = per_member.iter().map(|c| c[lag].clone()).collect();
        let est = MatrixEstimate::from_members(&s)?;
        mean.push(est.mean);
        se.push(est.se);
    }
    let h = traj.sample_interval();
    Ok(CorrelationEstimate {
        lags: (0..=max_lag).map(|l| l as f64 * h).collect(),
        mean,
        se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdt::build_noise_model;
    use crate::kernel::{exact_full_vacf, kernel_error};
    use crate::krylov::{build_bundle, Method, Subspace};
    use crate::linalg::from_row_major;
    use crate::operators::{OperatorMode, ReducedOperators};
    use crate::system::{make_synthetic, toy2_fixture, SyntheticSpec};

    fn fixture() -> FullSystem {
        let spec = SyntheticSpec {
            d: 6,
            m: 2,
            gamma: 2.0,
            kbt: 1.0,
            lambda_min: 1.0,
            lambda_max: 4.0,
        };
        make_synthetic(&spec, 11).unwrap()
    }

    fn reduced(sys: &FullSystem, n: usize, subspace: Subspace) -> ReducedModel {
        let ops = ReducedOperators::new(sys, OperatorMode::PsiFree).unwrap();
        let pb = build_bundle(&ops, n, Method::Raw, subspace).unwrap();
        let nm = build_noise_model(&pb, &ops).unwrap();
        ReducedModel::new(sys, &pb, &nm).unwrap()
    }

    #[test]
    fn consistent_model_has_equilibrium_covariance() {
        let sys = fixture();
        for n in 1..=3 {
            let rm = reduced(&sys, n, Subspace::Standard);
            let lyap = rm.stationary_covariance().unwrap();
            let eq = rm.equilibrium_covariance().unwrap();
            assert!((&lyap - &eq).norm() <= 1e-8 * eq.norm(), "n={n}");
        }
    }

    #[test]
    fn reduced_vacf_approaches_full_vacf() {
        let sys = fixture();
        let grid = crate::kernel::uniform_grid(0.0, 3.0, 61);
        let exact = exact_full_vacf(&sys, &grid).unwrap();
        let errs: Vec<f64> = (1..=3)
            .map(|n| {
                let c = reduced(&sys, n, Subspace::Standard)
                    .exact_vacf(&grid)
                    .unwrap();
                assert!((&c[0] - Matrix::identity(2, 2)).norm() < 1e-8);
                kernel_error(&c, &exact, &grid, (0.0, 3.0))
                    .unwrap()
                    .frobenius
            })
            .collect();
        assert!(errs[2] < errs[0], "{errs:?}");
    }

    #[test]
    fn guard_names_frequency_and_gate_blocks() {
        let sys = toy2_fixture();
        match full_scheme(&sys, Some(1.0)) {
            Err(Error::StabilityGuard(msg)) => assert!(msg.contains("drift frequency")),
            other => panic!("expected guard violation, got {other:?}"),
        }
        let rm = reduced(&fixture(), 2, Subspace::Inverse);
        assert!(!rm.fdt_pass);
        assert!(matches!(
            reduced_scheme(&rm, None, Integrator::EulerMaruyama, false),
            Err(Error::FdtGate { .. })
        ));
    }

    #[test]
    fn ou_step_matches_scalar_closed_form() {
        let g = from_row_major(1, 1, &[-2.0]).unwrap();
        let s = from_row_major(1, 1, &[3.0]).unwrap();
        let h = 0.3;
        let (e, int, cov) = exact_ou_step(&g, &s, h).unwrap();
        assert!((e[(0, 0)] - (-0.6f64).exp()).abs() < 1e-14);
        assert!((int[(0, 0)] - (1.0 - (-0.6f64).exp()) / 2.0).abs() < 1e-14);
        assert!((cov[(0, 0)] - 3.0 * (1.0 - (-1.2f64).exp()) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn runs_are_deterministic_in_seed() {
        let sys = toy2_fixture();
        let mut params = SimParams::new(2000, 3);
        params.dt = Some(0.01);
        let a = simulate_full(&sys, &params, 5).unwrap();
        let b = simulate_full(&sys, &params, 5).unwrap();
        let c = simulate_full(&sys, &params, 6).unwrap();
        for (x, y) in a.members.iter().zip(&b.members) {
            assert_eq!(x.p, y.p);
            assert_eq!(x.qq, y.qq);
        }
        assert_ne!(a.members[0].p, c.members[0].p);
        // member streams are independent of ensemble size
        params.ensemble = 1;
        let d = simulate_full(&sys, &params, 5).unwrap();
        assert_eq!(d.members[0].p, a.members[0].p);
    }

    #[test]
    fn full_toy2_equipartition() {
        let sys = toy2_fixture();
        let mut params = SimParams::new(100_000, 16);
        params.dt = Some(0.005);
        let traj = simulate_full(&sys, &params, 1).unwrap();
        let q = traj.covariance_q().unwrap();
        let p = traj.covariance_p().unwrap();
        assert!(
            q.within(&from_row_major(1, 1, &[0.6]).unwrap(), SE_BANDS),
            "{q:?}"
        );
        assert!(p.within(&Matrix::identity(1, 1), SE_BANDS), "{p:?}");
        let c = vacf(&traj, 20).unwrap();
        assert!((c.mean[0][(0, 0)] - 1.0).abs() <= SE_BANDS * c.se[0][(0, 0)]);
        assert!(vacf(&traj, traj.samples()).is_err());
    }

    #[test]
    fn exponential_aux_scheme_reaches_equilibrium() {
        let sys = fixture();
        let rm = reduced(&sys, 2, Subspace::Standard);
        let mut params = SimParams::new(60_000, 16);
        params.dt = Some(0.005);
        params.integrator = Integrator::ExponentialAux;
        let traj = simulate_reduced(&rm, &params, 3).unwrap();
        let p = traj.covariance_p().unwrap();
        let q = traj.covariance_q().unwrap();
        assert!(p.within(&Matrix::identity(2, 2), SE_BANDS), "{p:?}");
        assert!(q.within(&inverse(&rm.aeff).unwrap(), SE_BANDS), "{q:?}");
    }
}
