use thiserror::Error;

use crate::recovery::RefineOutcome;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("quality radicand is negative ({0:e}); energy and Fourier evaluation disagree")]
    NegativeRadicand(f64),

    #[error("transition graph has no reachable terminal mode")]
    EmptyGraph,

    #[error("path enumeration exceeded the cap of {cap} paths")]
    PathExplosion { cap: usize },

    #[error("guard violated at switch {index}: clock {clock:.6} < interlock {interlock:.6}")]
    GuardViolation {
        index: usize,
        clock: f64,
        interlock: f64,
    },

    #[error("quadrature did not converge (achieved error estimate {achieved:e})")]
    QuadratureAccuracy { achieved: f64 },

    #[error("harmonic of order {order} has degree {order} which exceeds 2*beta = {}", 2 * .beta)]
    DegreeTooLow { order: u32, beta: usize },

    #[error("no feasible switching sequence found")]
    Infeasible,

    #[error("recovered level sequence steps by more than one level at column {column}")]
    InvalidPath { column: usize },

    #[error("refinement did not reach the feasibility tolerance (max violation {:e})", .0.max_violation)]
    RefineFailed(Box<RefineOutcome>),

    #[error("numerical failure after {iterations} iterations: {message}")]
    NumericalFailure { message: String, iterations: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
