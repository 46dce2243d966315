use std::io;

use thiserror::Error;

use crate::episode::Resource;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty graph")]
    EmptyGraph,
    #[error("invalid entity id {0}")]
    InvalidEntity(u32),
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("empty question")]
    EmptyQuestion,
    #[error("charge amount must be positive")]
    ZeroCharge,
    #[error("{resource} budget overflow: {used} + {amount} > {cap}")]
    BudgetOverflow {
        resource: Resource,
        used: u64,
        amount: u64,
        cap: f64,
    },
    #[error("audit failure at event {index}: {msg}")]
    Audit { index: usize, msg: String },
    #[error("all actions are masked")]
    AllMasked,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("infeasible task config: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
