use crate::model::{OperatorId, StationId, UserId};

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown operator {0}")]
    UnknownOperator(OperatorId),
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("user {0} has no association")]
    Unassociated(UserId),
    #[error("operator {0} has no active users")]
    IdleOperator(OperatorId),
    #[error("user {0} has zero rate; log utility is undefined")]
    ZeroRate(UserId),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("{candidates:.3e} candidate associations exceed the enumeration guard {guard:.1e}")]
    EnumerationGuard { candidates: f64, guard: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("capacity search bracket [{lo}, {hi}] does not contain a match")]
    SearchNotBracketed { lo: f64, hi: f64, trace: Vec<(f64, f64)> },
}

pub type Result<T> = std::result::Result<T, Error>;
