use thiserror::Error;

use crate::sequences::Family;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "capacity exceeded: {family} family at length {length} holds at most {limit} sequences, {requested} requested"
    )]
    Capacity {
        family: Family,
        length: usize,
        limit: usize,
        requested: usize,
    },

    #[error("framing error: {0}")]
    Framing(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Every problem found in one validation pass.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
