use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter in dim {dim} ({name}): {reason}")]
    InvalidParameter {
        dim: usize,
        name: String,
        reason: String,
    },
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("maze specification infeasible after {retries} retries: {reason}")]
    InfeasibleSpec { retries: usize, reason: String },
    #[error("malformed grid: {0}")]
    MalformedGrid(String),
    #[error("training diverged (minibatch {minibatch}): {what}")]
    TrainingDiverged { minibatch: usize, what: String },
    #[error("invalid delta in dim {dim}: {value}")]
    InvalidDelta { dim: usize, value: f64 },
    #[error("requested {requested} environments but only {available} distinct grid combinations exist")]
    TooManyEnvironments { requested: usize, available: usize },
    #[error("probe {probe:?} is not covered by any interval")]
    CoverageViolation { probe: Vec<f64> },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("need at least {needed} dimensions, got {got}")]
    InsufficientDimensions { needed: usize, got: usize },
    #[error("cannot train: real replay buffer is empty")]
    CannotTrain,
    #[error("no real data available for synthetic generation")]
    NoRealData,
    #[error("invalid diffusion schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("incompatible logs: {0}")]
    IncompatibleLogs(String),
    #[error("disjointness violated: {0}")]
    Disjointness(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run aborted at event {event_index}: {source}")]
    RunAborted {
        event_index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;
