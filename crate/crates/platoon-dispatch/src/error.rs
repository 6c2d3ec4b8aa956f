use thiserror::Error;

/// Errors shared across the model, solvers, simulator, and CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or run parameter is outside its admissible range. The field
    /// name identifies the offending input.
    #[error("invalid parameter `{field}` = {value}: {requirement}")]
    InvalidParam {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// Dispatch was requested while the post-arrival queue is empty.
    #[error("cannot dispatch from an empty post-arrival queue")]
    EmptyDispatch,

    /// A queue state lies outside the range an operation is defined on.
    #[error("state {x} is outside the supported range 0..={max} for {what}")]
    StateOutOfRange {
        what: &'static str,
        x: usize,
        max: usize,
    },

    /// Value iteration hit the sweep cap before meeting the stopping rule.
    #[error("value iteration did not converge within {sweeps} sweeps (last residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// The threshold search ran past its cap without finding a cost increase.
    /// The cost curve computed so far is carried along for diagnosis.
    #[error("threshold search exceeded cap m = {cap} without a cost increase (curve so far: {curve:?})")]
    SearchCapExceeded { cap: usize, curve: Vec<f64> },

    /// A policy table is not of threshold type; the listed post-arrival
    /// states break the hold-prefix / dispatch-suffix structure.
    #[error("policy is not threshold-structured; offending post-arrival states: {offenders:?}")]
    NotThreshold { offenders: Vec<usize> },

    /// The stationary balance system could not be solved.
    #[error("stationary balance system is singular for threshold m = {m}")]
    SingularBalance { m: usize },

    /// Malformed command-line input or config file.
    #[error("{0}")]
    BadInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to: 2 for input validation,
    /// 3 for computation failures, 4 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParam { .. }
            | Error::EmptyDispatch
            | Error::StateOutOfRange { .. }
            | Error::BadInput(_) => 2,
            Error::NoConvergence { .. }
            | Error::SearchCapExceeded { .. }
            | Error::NotThreshold { .. }
            | Error::SingularBalance { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
