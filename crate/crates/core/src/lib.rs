//! Estimation of causal effects of treatment-coverage policies under
//! clustered interference.
//!
//! The pipeline implemented here starts from observational data grouped into
//! clusters (treatment may spill over within a cluster but not across
//! clusters) and targets counterfactual policies in which each individual's
//! marginal probability of treatment equals a chosen coverage `alpha`, while
//! the within-cluster selection correlation is kept as observed:
//!
//! 1. [`propensity`] fits a logistic random-intercept propensity model by
//!    maximum likelihood, integrating the random intercept with Gauss–Hermite
//!    quadrature.
//! 2. [`policy`] solves for the counterfactual intercept that attains a
//!    coverage `alpha` and estimates the counterfactual probabilities
//!    `omega(s, n, alpha)` that a size-`n` cluster has `s` treated members,
//!    either by exhaustive enumeration or by seeded stratum sub-sampling.
//! 3. [`estimators`] evaluates inverse-probability-weighted point estimates
//!    of population means, overall effects, and spillover effects.
//! 4. [`mestimation`] stacks the estimating functions of every fitted
//!    quantity and computes the empirical sandwich covariance, from which
//!    Wald confidence intervals are built.
//! 5. [`simulation`] provides the data-generating process and the empirical
//!    truth-determination procedures used by the replication harness.
//!
//! The crate is `no_std`-compatible (allocation required): disable default
//! features and enable `libm` for freestanding targets.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("cipw-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod comb;
pub mod data;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mestimation;
pub mod policy;
pub mod propensity;
pub mod quad;
pub mod rng;
pub mod root;
pub mod simulation;

mod fmath;

pub use data::{ClusterData, ClusterId};
pub use error::{Error, Result};
pub use estimators::{EstimandKind, EstimandSpec, EstimateReport};
pub use mestimation::{SandwichResult, StackContext, ThetaStack};
pub use policy::{CounterfactualWeights, PolicySolution, SampleRegistry, StrataSelection};
pub use propensity::{FitOptions, MleFit, PropensityParams};
pub use quad::QuadratureRule;
pub use simulation::{DgpConfig, TruthTable};
