use thiserror::Error;

use crate::diagram::ValidationReport;
use crate::dsl::ParseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid diagram: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unresolved policy parameter `{0}`")]
    UnresolvedPolicy(String),
    #[error("conditioning event has probability zero")]
    ZeroProbability,
    #[error("diagram has no utility nodes")]
    NoUtility,
    #[error("diagram has no decision nodes")]
    NoDecision,
    #[error("policy space has {count} tables, above the cap of {cap}")]
    CapExceeded { count: String, cap: u64 },
    #[error("not MDP-shaped: {0}")]
    NotMdpShaped(String),
    #[error("template: {0}")]
    Template(String),
    #[error("transform: {0}")]
    Transform(String),
    #[error("event: {0}")]
    Event(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("discount must be below 1 for an infinite horizon")]
    GammaNotBelowOne,
    #[error("environment: {0}")]
    Env(String),
    #[error("config: {0}")]
    Config(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
