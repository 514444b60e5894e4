use thiserror::Error;

use crate::matrix::StateId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {state} is not summable: {terms} terms enumerated, running sum {sum}")]
    NonFiniteRowSum { state: StateId, terms: usize, sum: f64 },

    #[error("column scale for state {state} must be positive, got {value}")]
    NonPositiveScale { state: StateId, value: f64 },

    #[error("taboo recursion left the floating-point range at step {step}")]
    HorizonOverflow { step: usize },

    #[error("lazy state budget of {budget} states exhausted")]
    StateBudgetExhausted { budget: usize },

    #[error("power iteration did not converge in {iterations} iterations (relative bracket {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("truncation ladder not monotone: R = {previous} at radius {previous_radius}, R = {current} at radius {radius}")]
    LadderNotMonotone {
        previous_radius: usize,
        previous: f64,
        radius: usize,
        current: f64,
    },

    #[error("all {n_excursions} excursions from state {start} hit the horizon cap")]
    AllTruncated { start: StateId, n_excursions: u64 },

    #[error("shift {shift} is inadmissible: diagonal entry {diagonal} at state {state}")]
    ShiftInadmissible {
        state: StateId,
        diagonal: f64,
        shift: f64,
    },

    #[error("spectral bound {lambda} does not exceed diagonal entry {diagonal} at state {state}")]
    LemmaViolated {
        state: StateId,
        diagonal: f64,
        lambda: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("negative off-diagonal entry {value} at ({row}, {col})")]
    NegativeOffDiagonal { row: StateId, col: StateId, value: f64 },

    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: StateId, col: StateId },

    #[error("negative entry {value} at ({row}, {col}) in a non-negative matrix")]
    NegativeEntry { row: StateId, col: StateId, value: f64 },

    #[error("state {0} is outside the state space")]
    UnknownState(StateId),

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
