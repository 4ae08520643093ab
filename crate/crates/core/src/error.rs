use thiserror::Error;

/// Errors raised by the library.
///
/// [`OsaError::is_numerical`] separates numerical failures (root brackets,
/// zero-probability observations, solver blow-ups) from input validation
/// problems; the CLI maps the two onto different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OsaError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("root not bracketed: target {target} outside [{f_lo}, {f_hi}]")]
    Bracket { target: f64, f_lo: f64, f_hi: f64 },
    #[error("observation has zero probability under the current belief")]
    ZeroProbabilityObservation,
    #[error("conditioning on an event of zero probability: {0}")]
    ZeroProbabilityCondition(String),
    #[error("Markov chain is not ergodic: {0}")]
    NonErgodic(String),
    #[error("infeasible operating point: {0}")]
    InfeasiblePoint(String),
    #[error("size limit exceeded: {0}")]
    Limit(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl OsaError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            OsaError::Bracket { .. }
                | OsaError::ZeroProbabilityObservation
                | OsaError::ZeroProbabilityCondition(_)
                | OsaError::NonErgodic(_)
                | OsaError::Limit(_)
                | OsaError::Solver(_)
        )
    }
}

impl From<std::io::Error> for OsaError {
    fn from(e: std::io::Error) -> Self {
        OsaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, OsaError>;
