use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the CLI exit code they map to; see [`Error::exit_code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("network is disconnected")]
    DisconnectedGraph,
    #[error("nonpositive parameter {what} = {value}")]
    NonpositiveParameter { what: String, value: f64 },
    #[error("bad thermal limits on line {from}->{to}: Pmin {min} must be below Pmax {max}")]
    BadThermalLimits {
        from: usize,
        to: usize,
        min: f64,
        max: f64,
    },
    #[error("duplicate line between buses {from} and {to}")]
    DuplicateLine { from: usize, to: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("bus {bus} has zero quadratic cost coefficient; strong convexity cannot be restored")]
    ZeroCurvature { bus: usize },
    #[error("step events are not sorted by time")]
    UnsortedEvents,
    #[error("sinusoid modifier selects no buses")]
    EmptyBusSet,
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("equilibrium fails KKT check (residual {residual:e})")]
    BadEquilibrium { residual: f64 },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("trajectory not converged (g = {g:e})")]
    NotConverged { g: f64 },
    #[error("case is not a two-bus, single-line, fully controllable network")]
    NotTwoBus,
    #[error("line limit binds at the unconstrained optimum")]
    BindingLimit,
    #[error("grid search supports at most 3 controllable buses, got {n}")]
    TooLarge { n: usize },
    #[error("no feasible grid point")]
    Infeasible,
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI contract: 2 for bad input, 3 for numeric blow-up,
    /// 4 for failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteState { .. } => 3,
            Error::BadEquilibrium { .. } | Error::NotConverged { .. } | Error::Infeasible => 4,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
