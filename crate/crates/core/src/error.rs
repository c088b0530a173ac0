use thiserror::Error;

/// Errors raised anywhere in the solver, oracle or evaluation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("quadratic is unbounded below")]
    UnboundedBelow,
    #[error("quadratic has negative curvature in the eliminated variable")]
    NegativeCurvature,
    #[error("the two functions are identical within tolerance")]
    IdenticalFunctions,
    #[error("data is empty")]
    EmptyData,
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("bad segment range ({start}, {end}] for {n} observations")]
    BadRange { start: usize, end: usize, n: usize },
    #[error("noise variance must be positive and finite, got {0}")]
    SigmaNotPositive(f64),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("invalid changepoints: {0}")]
    InvalidChangepoints(String),
    #[error("singular boundary system at row {0}")]
    SingularSystem(usize),
    #[error("candidate set grew to {size} at t = {t}, above the limit of {limit}")]
    CandidateLimit { t: usize, size: usize, limit: usize },
    #[error("exhaustive search supports at most {limit} observations, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("estimated variance is zero; supply sigma explicitly")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad scenario: {0}")]
    BadScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
