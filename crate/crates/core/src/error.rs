use thiserror::Error;

/// Errors raised anywhere in the reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("singular matrix: smallest pivot magnitude {pivot:.3e} (tolerance {tol:.3e})")]
    Singular { pivot: f64, tol: f64 },

    #[error("matrix is not symmetric positive definite: eigenvalue {eigenvalue:.6e}")]
    NotSpd { eigenvalue: f64 },

    #[error(
        "covariance is not positive semidefinite: eigenvalue {eigenvalue:.6e} below -{tol:.3e}"
    )]
    NotPsd { eigenvalue: f64, tol: f64 },

    #[error("basis columns are not orthonormal: max deviation {deviation:.3e}")]
    NotOrthonormal { deviation: f64 },

    #[error("Lyapunov solve failed: relative residual {residual:.3e}")]
    Lyapunov { residual: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("Krylov breakdown at block {stage}: {msg}")]
    Breakdown { stage: usize, msg: String },

    #[error("ill-conditioned Hankel system: cond2 = {cond:.3e}")]
    IllConditioned { cond: f64 },

    #[error("simulation diverged: non-finite state in ensemble member {member} by step {step}")]
    Diverged { member: usize, step: usize },

    #[error("stability guard violated: {0}")]
    StabilityGuard(String),

    #[error("FDT check failed (Condition B relative residual {residual:.3e}); set simulation.allow_fdt_violation to simulate anyway")]
    FdtGate { residual: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singular { .. }
            | Error::Lyapunov { .. }
            | Error::Breakdown { .. }
            | Error::IllConditioned { .. }
            | Error::NotPsd { .. }
            | Error::Diverged { .. } => 3,
            Error::FdtGate { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
