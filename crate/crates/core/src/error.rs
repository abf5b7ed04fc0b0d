use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("user index {index} out of range for {users} users")]
    UserIndex { index: usize, users: usize },
    #[error("pilot matrix needs n_T >= M, got n_T = {n_train} with M = {antennas}")]
    PilotRank { n_train: usize, antennas: usize },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
