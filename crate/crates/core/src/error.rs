use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("result would hold {entries} entries, above the limit of {limit}")]
    SizeOverflow { entries: u128, limit: usize },

    #[error("eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {reason}")]
    InvalidModel { path: String, reason: String },

    #[error("agent index {index} out of range 1..={agents}")]
    AgentOutOfRange { index: usize, agents: usize },

    #[error("delay digit {digit} on link {link} out of range 0..{q}")]
    DigitOutOfRange { link: usize, digit: usize, q: usize },

    #[error(
        "mode cap exceeded for {scope}: q^L = {q}^{links} modes, cap is {cap}; \
         use the reduced per-agent test instead"
    )]
    ModeCapExceeded {
        scope: String,
        q: usize,
        links: usize,
        cap: usize,
    },

    #[error("perturbation violates the transition-matrix structure: {0}")]
    Structure(String),

    #[error("bound LP for column {column} is infeasible: beta = {beta} leaves no room for perturbation")]
    LpInfeasible { column: usize, beta: f64 },

    #[error("simplex hit its iteration cap of {iterations} (cycling suspected)")]
    LpCycling { iterations: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
