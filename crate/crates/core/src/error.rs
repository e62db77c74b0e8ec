use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (defect {0:.3e})")]
    NotUnitary(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("degenerate draw: {0}")]
    Degenerate(String),

    #[error("solver residual {residual:.3e} exceeds ceiling {ceiling:.3e}")]
    SolverCeiling { residual: f64, ceiling: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical solve rather than of input validation.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::SolverCeiling { .. } | Error::NoConvergence(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
