use thiserror::Error;

use crate::lp::LpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scenario, grid or distribution configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A request could not be mapped onto the cluster registry.
    #[error("assignment error: {0}")]
    Assignment(String),

    /// A move plan asked more members to leave a state than it holds.
    #[error("infeasible move at step {t}: cluster {cluster}, state {state}: {detail}")]
    InfeasibleMove {
        t: usize,
        cluster: usize,
        state: usize,
        detail: String,
    },

    /// Members would miss their service deadline.
    #[error("deadline violation at step {t}: cluster {cluster}: {detail}")]
    DeadlineViolation {
        t: usize,
        cluster: usize,
        detail: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("instance too large: {0}")]
    Size(String),

    /// The linear program did not reach an optimal basis.
    #[error("linear program ended with status {status:?}: {context}")]
    Lp { status: LpStatus, context: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by an infeasible schedule rather than bad input.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleMove { .. } | Error::DeadlineViolation { .. } | Error::Lp { .. }
        )
    }
}
