use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("length mismatch: expected at least {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("supercritical target rejected: {0}")]
    SupercriticalRejected(String),
    #[error("truncation too small: {0}")]
    TruncationTooSmall(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("stiffness failure at t = {t}: step size {dt:e} underflowed; try the implicit method")]
    StiffnessFailure { t: f64, dt: f64 },
    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },
    #[error("jacobian consistency failure: max relative row error {max_rel_error:e} (row {row})")]
    ConsistencyFailure { max_rel_error: f64, row: usize },
    #[error("spectral failure: {0}")]
    SpectralFailure(String),
    #[error("dissipativity failure: functional {value:e} exceeds {threshold:e}")]
    DissipativityFailure {
        value: f64,
        threshold: f64,
        witness: Vec<f64>,
    },
    #[error("fit domain error: {0}")]
    FitDomain(String),
    #[error("infeasible perturbation: h[{index}] = {value} < -1")]
    InfeasiblePerturbation { index: usize, value: f64 },
    #[error("quadrature grid too narrow: tail mass {tail:e} exceeds tolerance {tol:e}")]
    WidenGrid { tail: f64, tol: f64 },
    #[error("bound failure: {0}")]
    BoundFailure(String),
    #[error("Duhamel formulation inconsistency: residual {0:e}")]
    FormulationInconsistency(f64),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidModel(_)
                | Error::SupercriticalRejected(_)
                | Error::LengthMismatch { .. }
                | Error::ContractViolation(_)
                | Error::Json(_)
        )
    }
}
