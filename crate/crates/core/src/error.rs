use thiserror::Error;

/// Errors produced across the estimation chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible draw: {0}")]
    InfeasibleDraw(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("bound invalid: {0}")]
    BoundInvalid(String),

    #[error("infeasible allocation: {0}")]
    InfeasibleAllocation(String),

    #[error("guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
