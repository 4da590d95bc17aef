use thiserror::Error;

/// Crate-wide error type. Hard verification failures are reported through the
/// ledger, not through this enum; `Error` is for conditions that prevent a
/// stage from producing a result at all.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration rejected: {0}")]
    Config(String),

    #[error("hypothesis violated: need m >= 1 and n >= 2m + 4, got n = {n}, m = {m}")]
    Hypothesis { n: u32, m: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("indeterminate sign: mixed-sign log-domain sum cancels below working precision (leading term e^{leading_ln}, residual e^{residual_ln})")]
    IndeterminateSign { leading_ln: f64, residual_ln: f64 },

    #[error("search did not terminate: {context} (after {steps} steps; violated: {violated})")]
    NonTermination {
        context: String,
        steps: u64,
        violated: String,
    },

    #[error("construction invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
