//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario tree violating a structural invariant.
    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    /// A utility/distortion specification violating its contract.
    #[error("invalid cpt specification: {0}")]
    InvalidSpec(String),

    /// An operation called outside its stated precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Parameters outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The brute-force oracle was invoked outside its valid range.
    #[error("oracle domain error: {0}")]
    OracleDomain(String),

    /// The robust no-arbitrage check failed; carries the offending node.
    #[error("robust no-arbitrage fails at node {node}: {detail}")]
    NoArbitrage { node: usize, detail: String },

    /// An iterative solver ran out of iterations.
    #[error("solver did not converge after {iters} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iters: usize, grad_norm: f64 },

    /// A joint density evaluated to (numerically) zero mass where positive
    /// mass is required.
    #[error("density support error: {0}")]
    DensitySupport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
