//! Run configuration and the stage orchestrator behind the command line.
//!
//! Every artifact carries the SHA-256 of the effective configuration, which is
//! also written to `config.toml` in the output directory. Re-running from that
//! file reproduces every artifact byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdt::{build_noise_model, CONDITION_B_TOL};
use crate::io::{
    fmt_f64, format_matrix, read_matrix_file, write_annotated_matrix, write_text_file,
};
use crate::kernel::{exact_full_vacf, exact_kernel, kernel_error, uniform_grid, MAX_REFERENCE_DIM};
use crate::krylov::{build_bundle, Method, ProjectionBundle, Subspace};
use crate::linalg::{inverse, Matrix};
use crate::matching::{cond_table, match_moments};
use crate::moments::{compute_moments_to, moment_identities, MomentSet};
use crate::operators::{OperatorMode, ReducedOperators};
use crate::sim::{
    self, simulate_full, simulate_reduced, Integrator, ReducedModel, SimParams, Trajectory,
    SE_BANDS,
};
use crate::system::{make_synthetic, toy2_fixture, FullSystem, SyntheticSpec};

/// Where the full system comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSource {
    /// The two-dimensional hand-checkable example.
    Toy2,
    Synthetic(SyntheticSpec),
    Files(SystemFiles),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFiles {
    pub a: PathBuf,
    pub phi: PathBuf,
    pub gamma: f64,
    #[serde(default = "one")]
    pub kbt: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub order: usize,
    pub method: Method,
    pub subspace: Subspace,
    pub operators: OperatorMode,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            order: 2,
            method: Method::Raw,
            subspace: Subspace::Standard,
            operators: OperatorMode::PsiFree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t_max: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            t_max: 5.0,
            points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondTableConfig {
    pub min_order: usize,
    pub max_order: usize,
}

impl Default for CondTableConfig {
    fn default() -> Self {
        CondTableConfig {
            min_order: 2,
            max_order: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatedModel {
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub model: SimulatedModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub steps: usize,
    pub ensemble: usize,
    pub burn_in: f64,
    pub record_every: usize,
    pub integrator: Integrator,
    pub allow_fdt_violation: bool,
    /// Largest VACF lag, in stored samples.
    pub max_lag: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let p = SimParams::new(100_000, 16);
        SimulationConfig {
            model: SimulatedModel::Reduced,
            dt: None,
            steps: p.steps,
            ensemble: p.ensemble,
            burn_in: p.burn_in,
            record_every: p.record_every,
            integrator: p.integrator,
            allow_fdt_violation: false,
            max_lag: 100,
        }
    }
}

impl SimulationConfig {
    pub fn params(&self) -> SimParams {
        SimParams {
            dt: self.dt,
            steps: self.steps,
            ensemble: self.ensemble,
            burn_in: self.burn_in,
            record_every: self.record_every,
            integrator: self.integrator,
            allow_fdt_violation: self.allow_fdt_violation,
            state_covariance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorsConfig {
    /// Time window of the relative `L²` errors.
    pub window: [f64; 2],
    pub points: usize,
}

impl Default for ErrorsConfig {
    fn default() -> Self {
        ErrorsConfig {
            window: [0.0, 1.0],
            points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSource,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub cond_table: CondTableConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub errors: ErrorsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            system: SystemSource::Toy2,
            reduction: ReductionConfig::default(),
            grid: GridConfig::default(),
            cond_table: CondTableConfig::default(),
            simulation: SimulationConfig::default(),
            errors: ErrorsConfig::default(),
        }
    }
}

fn reject_matrix_damping(value: &toml::Value) -> Result<()> {
    let gamma = value.get("system").and_then(|s| s.get("gamma"));
    match gamma {
        Some(toml::Value::Array(_)) | Some(toml::Value::Table(_)) => Err(Error::Invalid(
            "system.gamma must be a scalar: only scalar damping Γ = γI is supported, not a matrix"
                .into(),
        )),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Parses a config document; relative system file paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let raw: toml::Value =
            toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        reject_matrix_damping(&raw)?;
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        if let (SystemSource::Files(files), Some(base)) = (&mut cfg.system, base) {
            for p in [&mut files.a, &mut files.phi] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = std::path::absolute(path)
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf));
        Self::parse(&text, base.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction.order == 0 {
            return Err(Error::Invalid("reduction.order must be at least 1".into()));
        }
        if self.grid.points < 2 || !(self.grid.t_max > 0.0) {
            return Err(Error::Invalid(
                "grid needs t_max > 0 and at least 2 points".into(),
            ));
        }
        if self.cond_table.min_order == 0 || self.cond_table.min_order > self.cond_table.max_order {
            return Err(Error::Invalid(
                "cond_table needs 1 <= min_order <= max_order".into(),
            ));
        }
        let [lo, hi] = self.errors.window;
        if !(lo >= 0.0 && hi > lo) || self.errors.points < 2 {
            return Err(Error::Invalid(
                "errors.window must be an increasing pair of times".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("config serialization: {e}")))
    }

    /// Hex SHA-256 of the canonical serialized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Pipeline stages, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Moments,
    Match,
    CondTable,
    Reduce,
    FdtCheck,
    Kernel,
    Simulate,
    Vacf,
    Errors,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Moments => "moments",
            Stage::Match => "match",
            Stage::CondTable => "cond-table",
            Stage::Reduce => "reduce",
            Stage::FdtCheck => "fdt-check",
            Stage::Kernel => "kernel",
            Stage::Simulate => "simulate",
            Stage::Vacf => "vacf",
            Stage::Errors => "errors",
        }
    }
}

/// Executes stages of one configuration into an output directory.
pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(rows * cols);
    for i in 1..=rows {
        for j in 1..=cols {
            names.push(format!("{prefix}_{i}_{j}"));
        }
    }
    names
}

fn push_entries(row: &mut Vec<String>, m: &Matrix) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(fmt_f64(m[(i, j)]));
        }
    }
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        Ok(Pipeline {
            cfg,
            hash,
            out: out.to_path_buf(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Runs one stage, writing `config.toml` and the stage artifacts.
    pub fn run(&self, stage: Stage) -> Result<()> {
        write_text_file(&self.out.join("config.toml"), &self.cfg.to_toml()?)?;
        match stage {
            Stage::Generate => self.generate(),
            Stage::Moments => self.moments(),
            Stage::Match => self.matching(),
            Stage::CondTable => self.cond_table(),
            Stage::Reduce => self.reduce(),
            Stage::FdtCheck => self.fdt_check(),
            Stage::Kernel => self.kernel(),
            Stage::Simulate => self.simulate(),
            Stage::Vacf => self.vacf(),
            Stage::Errors => self.errors(),
        }
    }

    fn system(&self) -> Result<FullSystem> {
        match &self.cfg.system {
            SystemSource::Toy2 => Ok(toy2_fixture()),
            SystemSource::Synthetic(spec) => make_synthetic(spec, self.cfg.seed),
            SystemSource::Files(f) => FullSystem::new(
                read_matrix_file(&f.a)?,
                read_matrix_file(&f.phi)?,
                f.gamma,
                f.kbt,
            ),
        }
    }

    fn operators(&self, sys: &FullSystem) -> Result<ReducedOperators> {
        ReducedOperators::new(sys, self.cfg.reduction.operators)
    }

    fn bundle(&self, ops: &ReducedOperators, n: usize) -> Result<ProjectionBundle> {
        build_bundle(
            ops,
            n,
            self.cfg.reduction.method,
            self.cfg.reduction.subspace,
        )
    }

    fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut text = format!("# config_sha256: {}\n{}\n", self.hash, header.join(","));
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        write_text_file(&self.out.join(name), &text)
    }

    fn matrix(&self, name: &str, m: &Matrix) -> Result<()> {
        write_annotated_matrix(&self.out.join(name), m, &[("config_sha256", &self.hash)])
    }

    fn metadata(&self, stage: Stage, body: serde_json::Value) -> Result<()> {
        let doc = json!({
            "stage": stage.name(),
            "config_sha256": self.hash,
            "seed": self.cfg.seed,
            "result": body,
        });
        let text =
            serde_json::to_string_pretty(&doc).map_err(|e| Error::Invalid(e.to_string()))? + "\n";
        write_text_file(&self.out.join(format!("{}.json", stage.name())), &text)
    }

    fn generate(&self) -> Result<()> {
        let sys = self.system()?;
        self.matrix("A.txt", &sys.a)?;
        self.matrix("Phi.txt", &sys.phi)?;
        self.metadata(
            Stage::Generate,
            json!({
                "d": sys.d(),
                "m": sys.m(),
                "gamma": sys.gamma,
                "kbt": sys.kbt,
                "max_frequency": sys.max_frequency()?,
            }),
        )
    }

    fn moment_set(&self, ops: &ReducedOperators, count: usize) -> Result<MomentSet> {
        compute_moments_to(ops, count)
    }

    fn moments(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        // enough moments for the order and for every scalar-damping identity
        let count = (2 * self.cfg.reduction.order - 1).max(8);
        let ms = self.moment_set(&ops, count)?;
        let m = ms.m();
        let mut header = vec!["moment".to_string()];
        header.extend(matrix_columns("M", m, m));
        let mut rows = Vec::with_capacity(count + 1);
        let mut row = vec!["inf".to_string()];
        push_entries(&mut row, &ms.minf);
        rows.push(row);
        for (k, mk) in ms.moments.iter().enumerate() {
            let mut row = vec![k.to_string()];
            push_entries(&mut row, mk);
            rows.push(row);
        }
        self.csv("moments.csv", &header, &rows)?;
        let report = moment_identities(&ms, sys.gamma);
        let id_rows: Vec<Vec<String>> = report
            .checks
            .iter()
            .map(|c| vec![c.name.to_string(), fmt_f64(c.residual)])
            .collect();
        self.csv(
            "identities.csv",
            &["identity".into(), "relative_residual".into()],
            &id_rows,
        )?;
        self.metadata(
            Stage::Moments,
            json!({
                "count": ms.len(),
                "max_asymmetry": ms.max_asymmetry,
                "identities_pass": report.pass(),
            }),
        )
    }

    fn matching(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        let n = self.cfg.reduction.order;
        let ms = self.moment_set(&ops, 2 * n - 1)?;
        let mm = match_moments(&ms, n)?;
        self.matrix("bcal.txt", &mm.bcal)?;
        self.matrix("ccal.txt", &mm.ccal)?;
        let integral = mm.integral()?.map(|i| format_matrix(&i));
        self.metadata(
            Stage::Match,
            json!({
                "order": n,
                "hankel_cond": mm.hankel_cond,
                "spectral_abscissa": mm.spectral_abscissa,
                "stable": mm.is_stable(),
                "integral": integral,
            }),
        )
    }

    fn cond_table(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        let c = &self.cfg.cond_table;
        let ms = self.moment_set(&ops, 2 * c.max_order - 1)?;
        let table = cond_table(&ms, c.min_order..=c.max_order)?;
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|(n, k)| vec![n.to_string(), fmt_f64(*k)])
            .collect();
        self.csv("cond_table.csv", &["n".into(), "cond".into()], &rows)?;
        let monotone = table.windows(2).all(|w| w[1].1 > w[0].1);
        self.metadata(Stage::CondTable, json!({ "monotone_increasing": monotone }))
    }

    fn reduce(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        let pb = self.bundle(&ops, self.cfg.reduction.order)?;
        self.matrix("mhat.txt", &pb.mhat)?;
        self.matrix("dhat.txt", &pb.dhat)?;
        self.matrix("wtr.txt", &pb.wtr)?;
        self.matrix("lv.txt", &pb.lv)?;
        self.matrix("drift.txt", &pb.drift()?)?;
        self.matrix("input.txt", &pb.input()?)?;
        self.metadata(
            Stage::Reduce,
            json!({
                "order": pb.n,
                "m": pb.m,
                "method": pb.method.to_string(),
                "subspace": pb.subspace.to_string(),
                "mhat_cond": pb.mhat_cond(),
                "off_block_diagonal": pb.off_block_diagonal(),
                "off_block_tridiagonal": pb.off_block_tridiagonal(),
            }),
        )
    }

    fn reduced_model(
        &self,
        sys: &FullSystem,
        n: usize,
    ) -> Result<(ProjectionBundle, ReducedModel)> {
        let ops = self.operators(sys)?;
        let pb = self.bundle(&ops, n)?;
        let nm = build_noise_model(&pb, &ops)?;
        let rm = ReducedModel::new(sys, &pb, &nm)?;
        Ok((pb, rm))
    }

    fn fdt_check(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        let pb = self.bundle(&ops, self.cfg.reduction.order)?;
        let nm = build_noise_model(&pb, &ops)?;
        self.matrix("qhat.txt", &nm.qhat)?;
        self.matrix("sigma_hat.txt", &nm.sigma_hat)?;
        let report =
            serde_json::to_value(nm.report()).map_err(|e| Error::Invalid(e.to_string()))?;
        self.metadata(
            Stage::FdtCheck,
            json!({ "report": report, "condition_b_tolerance": CONDITION_B_TOL }),
        )?;
        nm.gate(false)
    }

    fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, self.cfg.grid.t_max, self.cfg.grid.points)
    }

    fn kernel(&self) -> Result<()> {
        let sys = self.system()?;
        let ops = self.operators(&sys)?;
        let pb = self.bundle(&ops, self.cfg.reduction.order)?;
        let grid = self.grid();
        let reduced = pb.kernel(&grid)?;
        let exact = (sys.d() <= MAX_REFERENCE_DIM)
            .then(|| exact_kernel(&sys, &grid))
            .transpose()?;
        let m = sys.m();
        let mut header = vec!["t".to_string()];
        header.extend(matrix_columns("reduced", m, m));
        if exact.is_some() {
            header.extend(matrix_columns("exact", m, m));
        }
        let rows: Vec<Vec<String>> = grid
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut row = vec![fmt_f64(*t)];
                push_entries(&mut row, &reduced[i]);
                if let Some(e) = &exact {
                    push_entries(&mut row, &e[i]);
                }
                row
            })
            .collect();
        self.csv("kernel.csv", &header, &rows)?;
        self.metadata(
            Stage::Kernel,
            json!({ "order": pb.n, "points": grid.len(), "exact_included": exact.is_some() }),
        )
    }

    /// Simulates the configured model and returns it with its stationary `(⟨qqᵀ⟩, ⟨ppᵀ⟩)` targets.
    fn run_simulation(&self) -> Result<(Trajectory, Matrix, Matrix, String)> {
        let sys = self.system()?;
        let params = self.cfg.simulation.params();
        let kbt = sys.kbt;
        let m = sys.m();
        match self.cfg.simulation.model {
            SimulatedModel::Full => {
                let traj = simulate_full(&sys, &params, self.cfg.seed)?;
                let qq = sys.phi.transpose() * inverse(&sys.a)? * &sys.phi * kbt;
                let hash = model_hash(&[&sys.a, &sys.phi]);
                Ok((traj, qq, Matrix::identity(m, m) * kbt, hash))
            }
            SimulatedModel::Reduced => {
                let (_, rm) = self.reduced_model(&sys, self.cfg.reduction.order)?;
                let traj = simulate_reduced(&rm, &params, self.cfg.seed)?;
                let qq = inverse(&rm.aeff)? * kbt;
                let hash = model_hash(&[&rm.aeff, &rm.lv, &rm.drift, &rm.input, &rm.sigma_factor]);
                Ok((traj, qq, Matrix::identity(m, m) * kbt, hash))
            }
        }
    }

    fn simulation_metadata(&self, traj: &Trajectory, model_hash: &str) -> serde_json::Value {
        json!({
            "model": self.cfg.simulation.model,
            "model_sha256": model_hash,
            "dt": traj.dt,
            "steps": traj.steps,
            "ensemble": traj.ensemble,
            "seed": traj.seed,
            "burn_in_steps": traj.burn_in_steps,
            "record_every": traj.record_every,
            "acceptance_band_se": SE_BANDS,
        })
    }

    fn simulate(&self) -> Result<()> {
        let (traj, qq_target, pp_target, mhash) = self.run_simulation()?;
        let m = traj.m;
        // stored samples of the first member
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("q_{i}")));
        header.extend((1..=m).map(|i| format!("p_{i}")));
        let first = &traj.members[0];
        let h = traj.sample_interval();
        let t0 = traj.burn_in_steps as f64 * traj.dt;
        let rows: Vec<Vec<String>> = (0..traj.samples())
            .map(|k| {
                let mut row = vec![fmt_f64(t0 + (k + 1) as f64 * h)];
                row.extend(first.q[k * m..(k + 1) * m].iter().map(|v| fmt_f64(*v)));
                row.extend(first.p[k * m..(k + 1) * m].iter().map(|v| fmt_f64(*v)));
                row
            })
            .collect();
        self.csv("trajectory.csv", &header, &rows)?;
        let q = traj.covariance_q()?;
        let p = traj.covariance_p()?;
        let mut stats_header = vec!["statistic".to_string()];
        stats_header.extend(matrix_columns("c", m, m));
        let stat_rows: Vec<Vec<String>> = [
            ("qq_mean", &q.mean),
            ("qq_se", &q.se),
            ("qq_target", &qq_target),
            ("pp_mean", &p.mean),
            ("pp_se", &p.se),
            ("pp_target", &pp_target),
        ]
        .iter()
        .map(|(name, mat)| {
            let mut row = vec![name.to_string()];
            push_entries(&mut row, mat);
            row
        })
        .collect();
        self.csv("covariance.csv", &stats_header, &stat_rows)?;
        let mut meta = self.simulation_metadata(&traj, &mhash);
        meta["qq_max_deviation_se"] = json!(q.max_deviation(&qq_target));
        meta["pp_max_deviation_se"] = json!(p.max_deviation(&pp_target));
        self.metadata(Stage::Simulate, meta)
    }

    fn vacf(&self) -> Result<()> {
        let (traj, _, _, mhash) = self.run_simulation()?;
        let est = sim::vacf(&traj, self.cfg.simulation.max_lag)?;
        let sys = self.system()?;
        let exact = match self.cfg.simulation.model {
            SimulatedModel::Full => exact_full_vacf(&sys, &est.lags)?,
            SimulatedModel::Reduced => self
                .reduced_model(&sys, self.cfg.reduction.order)?
                .1
                .exact_vacf(&est.lags)?,
        };
        let m = traj.m;
        let mut header = vec!["t".to_string()];
        header.extend(matrix_columns("C", m, m));
        header.extend(matrix_columns("se", m, m));
        header.extend(matrix_columns("exact", m, m));
        let rows: Vec<Vec<String>> = est
            .lags
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut row = vec![fmt_f64(*t)];
                push_entries(&mut row, &est.mean[i]);
                push_entries(&mut row, &est.se[i]);
                push_entries(&mut row, &exact[i]);
                row
            })
            .collect();
        self.csv("vacf.csv", &header, &rows)?;
        self.metadata(Stage::Vacf, self.simulation_metadata(&traj, &mhash))
    }

    fn errors(&self) -> Result<()> {
        let sys = self.system()?;
        let [lo, hi] = self.cfg.errors.window;
        let grid = uniform_grid(0.0, hi, self.cfg.errors.points);
        let exact = exact_kernel(&sys, &grid)?;
        let exact_vacf = exact_full_vacf(&sys, &grid)?;
        let mut rows = Vec::new();
        for n in 1..=self.cfg.reduction.order {
            let (pb, rm) = self.reduced_model(&sys, n)?;
            let k = kernel_error(&pb.kernel(&grid)?, &exact, &grid, (lo, hi))?;
            let v = kernel_error(&rm.exact_vacf(&grid)?, &exact_vacf, &grid, (lo, hi))?;
            rows.push(vec![
                n.to_string(),
                fmt_f64(k.worst),
                fmt_f64(k.frobenius),
                fmt_f64(v.worst),
                fmt_f64(v.frobenius),
            ]);
        }
        let header: Vec<String> = [
            "n",
            "kernel_worst",
            "kernel_frobenius",
            "vacf_worst",
            "vacf_frobenius",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        self.csv("errors.csv", &header, &rows)?;
        self.metadata(
            Stage::Errors,
            json!({ "window": [lo, hi], "points": grid.len() }),
        )
    }
}

fn model_hash(parts: &[&Matrix]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(format_matrix(p).as_bytes());
    }
    hex(&h.finalize())
}
