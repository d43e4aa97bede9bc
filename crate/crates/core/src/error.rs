use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("metric is not positive definite at point {point} (offending value {value:e})")]
    NonSpdMetric { point: usize, value: f64 },

    #[error("flow variant {variant} requires the auxiliary field `{field}`")]
    MissingAuxiliaryField { variant: &'static str, field: &'static str },

    #[error("non-finite values at t = {time} (point {point})")]
    StabilityFailure { time: f64, point: usize },

    #[error("time step {dt:e} exceeds the stability bound {bound:e} at t = {time}")]
    StepTooLarge { dt: f64, bound: f64, time: f64 },

    #[error("solution lost positivity at tau = {tau} (point {point}, value {value:e})")]
    PositivityLoss { tau: f64, point: usize, value: f64 },

    #[error("flow failed at t = {time}: {source}")]
    FlowFailed { time: f64, source: Box<Error> },

    #[error("time index {index} has no neighbours for a centered difference (0..={last})")]
    BoundaryTime { index: usize, last: usize },

    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),

    #[error("heat parameters do not match theorem {theorem}: {reason}")]
    WrongHeatParams { theorem: String, reason: String },

    #[error("operation needs a {expected} trajectory, got {actual}")]
    WrongVariant { expected: &'static str, actual: &'static str },

    #[error("infeasible space-time path: {0}")]
    PathInfeasible(String),

    #[error("order fitting needs at least 3 refinement levels, got {0}")]
    InsufficientLevels(usize),

    #[error("invalid flow or heat specification: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cached {artifact} is stale: expected hash {expected}, found {found}")]
    StaleCache { artifact: String, expected: String, found: String },

    #[error("cached {0} is missing; run the upstream stage first")]
    MissingCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a step error with the flow time at which it happened.
    pub(crate) fn at_time(self, time: f64) -> Error {
        match self {
            e @ Error::FlowFailed { .. } => e,
            e => Error::FlowFailed { time, source: Box::new(e) },
        }
    }
}
