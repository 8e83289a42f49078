//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event log is empty")]
    EmptyLog,

    #[error("unknown transition `{0}`")]
    UnknownTransition(String),

    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),

    #[error("alphabet has {found} activities, maximum is {max}")]
    AlphabetOverflow { found: usize, max: usize },

    #[error("node {0} is already selected")]
    AlreadySelected(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("teacher-forced target is not selectable: {0}")]
    TargetNotSelectable(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("discovery failed: {0}")]
    DiscoveryFailed(String),

    #[error("invalid net: {0}")]
    InvalidNet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
