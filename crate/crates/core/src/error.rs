use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular linear system ({0})")]
    Singular(&'static str),

    #[error("linear program is infeasible (phase-one residual {residual:.3e})")]
    LpInfeasible { residual: f64 },

    #[error("linear program is unbounded (entering column {column})")]
    LpUnbounded { column: usize },

    #[error("projection problem is infeasible (constraint row {row} cannot be satisfied)")]
    QpInfeasible { row: usize },

    #[error("{solver} did not converge within {iterations} iterations: {detail}")]
    MaxIterations {
        solver: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("transitions depend on the action at state {state}, action {action} (deviation {deviation:.3e})")]
    NotActionIndependent {
        state: usize,
        action: usize,
        deviation: f64,
    },

    #[error("state {state} has occupancy {value:.3e}; the MDP is not ergodic under this policy")]
    ZeroOccupancy { state: usize, value: f64 },

    #[error("defense LP infeasible: {0}")]
    DefenseInfeasible(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
