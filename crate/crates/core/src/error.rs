use thiserror::Error;

use crate::coeffs::{EvalError, ParseError};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("diffusion is recurrent (both scale limits infinite); the potential density does not exist")]
    Recurrent,
    #[error("diffusion is not recurrent: {0}")]
    NotRecurrent(String),
    #[error("not a recurrent transform: {0}")]
    NotRecurrentTransform(String),
    #[error("scale limit at {0} is inconclusive")]
    InconclusiveLimit(f64),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("ODE solver failed: {0}")]
    Solver(String),
    #[error("bracketing failed: {0}")]
    Bracketing(String),
    #[error("unstable time stepping (dt = {dt}); try dt <= {suggested}")]
    Unstable { dt: f64, suggested: f64 },
    #[error("simulation aborted: {flagged} of {total} paths hit evaluation errors")]
    TooManyFlagged { flagged: usize, total: usize },
}
