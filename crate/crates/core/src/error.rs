use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function being evaluated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A nested expectation produced a non-finite value at an outer node.
    #[error("non-finite integrand value {value} at outer node {node} (abscissa {abscissa})")]
    Evaluation { node: usize, abscissa: f64, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sampler health: acceptance rate {acceptance:.4} below {threshold}")]
    SamplerHealth { acceptance: f64, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
