use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("nonlinear solver did not converge after {iterations} iterations (last update {last_update:e})")]
    SolverDivergence { iterations: usize, last_update: f64 },

    #[error("integration failed at t = {time}: {source}")]
    IntegrationFailed {
        time: f64,
        state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("singular chart: w1 = {w1:e}")]
    SingularChart { w1: f64 },

    #[error("unknown Hamiltonian `{0}`")]
    UnknownHamiltonian(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("no symplectic leaf for Casimir value {0}")]
    NoLeaf(f64),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverDivergence { .. } | Error::IntegrationFailed { .. } | Error::SingularChart { .. }
        )
    }
}
