//! Error type shared across the crate.

use alloc::string::String;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inputs have inconsistent shapes or invalid field values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A quantity left the domain it is defined on (e.g. alpha outside (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// A likelihood or integral evaluated to exactly zero.
    #[error("numerical underflow: {0}")]
    Underflow(String),

    /// A computed value was NaN or infinite.
    #[error("non-finite value in {context} (component {component})")]
    NonFinite { context: String, component: usize },

    /// The optimizer hit its iteration cap before meeting the tolerance.
    #[error("optimization did not converge: gradient max-norm {gradient_norm:e} after {iterations} iterations")]
    NoConvergence {
        gradient_norm: f64,
        iterations: usize,
    },

    /// All individuals share one treatment arm; the MLE does not exist.
    #[error("separation: data contain {0}")]
    Separation(String),

    /// Root bracketing or iteration failed.
    #[error("root solver failed: {0}")]
    Solver(String),

    /// Exhaustive enumeration was requested for a cluster size above the cap.
    #[error("cluster size {n} exceeds the exhaustive enumeration cap {cap}; use the sub-sampled estimator")]
    SizeCapExceeded { n: usize, cap: usize },

    /// A required counterfactual probability was never estimated.
    #[error("no counterfactual weight available for stratum (n={n}, s={s})")]
    Coverage { n: usize, s: usize },

    /// A cluster propensity score evaluated to zero.
    #[error("positivity violation: propensity score for cluster {0} is zero")]
    Positivity(String),

    /// A linear system was (numerically) singular.
    #[error("near-singular matrix: 1-norm condition estimate {condition:e}")]
    Singular { condition: f64 },

    /// A stacked parameter vector does not match the data or registry.
    #[error("stack layout mismatch: {0}")]
    LayoutMismatch(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
