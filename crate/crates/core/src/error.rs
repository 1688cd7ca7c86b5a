//! Error type shared across the simulator.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("group spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid element: {0}")]
    InvalidElement(String),

    #[error("{what} exceeds desk-scale cap: requested {requested}, limit {limit}")]
    CapExceeded {
        what: &'static str,
        requested: u64,
        limit: u64,
    },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: u64, size: u64 },

    #[error("map is not a permutation of the basis: {0}")]
    PermutationInvalid(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("register is not indexed by the expected group")]
    NotGroupBasis,

    #[error("state is not normalized: squared norm {0}")]
    NotNormalized(f64),

    #[error("conditioning on an outcome of zero probability mass")]
    DegenerateCollapse,

    #[error("query budget exhausted for {0}")]
    QueryBudgetExhausted(&'static str),

    #[error("unsupported capability: {0}")]
    Unsupported(&'static str),

    #[error("serial extraction needs support inside the member set (outside mass {0:.3e})")]
    FindhDomain(f64),

    #[error("referee protocol violation: {0}")]
    RefereeViolation(String),

    #[error("label width mismatch: expected {expected} bytes, got {got}")]
    LabelWidth { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    ParamInvalid(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
