use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("vertex {0} has zero degree")]
    Degree(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("graph is not connected: {0}")]
    Connectivity(String),
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
    #[error("step cap of {0} exceeded")]
    CapExceeded(u64),
}

pub type Result<T> = std::result::Result<T, Error>;
