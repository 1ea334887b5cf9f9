use thiserror::Error;

/// Errors raised by the library. Messages name the modelling assumption that
/// failed so that the CLI can surface them verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("regularity assumption violated: matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("invalid environment index {index} (config has {count} environments)")]
    InvalidEnvIndex { index: usize, count: usize },
    /// `env` is 1-based.
    #[error("anti-causal weights present in environment {env} (alpha must be zero here)")]
    AntiCausalPresent { env: usize },
    #[error("theta is not orthogonal (max deviation of theta*theta^T from identity is {deviation:.3e})")]
    NotOrthogonal { deviation: f64 },
    /// `env` and `index` are 1-based.
    #[error("realizability assumption violated: |w*_{env},{index}|={value} > w_sup={w_sup}")]
    RealizabilityViolated { env: usize, index: usize, value: f64, w_sup: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("V set is empty: all least-squares coefficients agree, the round bound is undefined")]
    EmptyVSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
