use alloc::string::String;

/// Errors raised by the simulation and inference routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid offspring law: {0}")]
    InvalidOffspringLaw(String),

    #[error("invalid control law: {0}")]
    InvalidControlLaw(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid observed sample: {0}")]
    InvalidSample(String),

    #[error("vector lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("coordinate {index} is not strictly positive ({value})")]
    NonPositiveEntry { index: usize, value: f64 },

    #[error("division by zero while computing summary: {0}")]
    DivisionByZero(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "simulation budget exceeded: {attempts} attempts produced only {accepted} of {required} \
         comparable simulations (prior and data look mismatched)"
    )]
    BudgetExceeded {
        attempts: u64,
        accepted: usize,
        required: usize,
    },

    #[error("model kappa={kappa} lost all weight (numerical underflow)")]
    DegenerateModel { kappa: usize },

    #[error(
        "only {found} particles with kappa={kappa}, need at least {required}; \
         increase the particle count"
    )]
    InsufficientParticles {
        kappa: usize,
        found: usize,
        required: usize,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("observed values have zero variance")]
    ZeroVariance,
}

pub type Result<T> = core::result::Result<T, Error>;
