use thiserror::Error;

use crate::placement::PlacementResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid is not radial: {0}")]
    NotRadial(String),
    #[error("node {node} has more than one incoming line")]
    DuplicateParent { node: usize },
    #[error("bad slack bus: {0}")]
    BadSlack(String),
    #[error("unknown line {0}")]
    UnknownLine(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid parameter on {element}: {reason}")]
    InvalidParameter { element: String, reason: String },

    #[error("squared voltage at node {node} fell to {v_sq:e}")]
    ZeroVoltage { node: usize, v_sq: f64 },
    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("gain matrix is singular: {0}")]
    SingularGain(String),

    #[error("{failed} of {total} realizations failed to converge")]
    TooManyFailures { failed: usize, total: usize },
    #[error("device budget exhausted with {} devices, |J|_inf = {:e}", .result.placements.len(), .result.final_report.j_inf)]
    BudgetExhausted { result: Box<PlacementResult> },

    #[error("infeasible fixture spec: {0}")]
    InfeasibleSpec(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ZeroVoltage { .. }
            | Error::NoConvergence { .. }
            | Error::SingularGain(_)
            | Error::TooManyFailures { .. } => 3,
            Error::BudgetExhausted { .. } => 4,
            Error::Io(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn invalid(element: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            element: element.into(),
            reason: reason.into(),
        }
    }
}
