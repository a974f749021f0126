//! Observed data for one cluster.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Opaque cluster identifier. Estimator sums run in ascending id order, so
/// ids double as the reproducibility ordering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub String);

impl core::fmt::Display for ClusterId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClusterId {
    fn from(s: &str) -> Self {
        ClusterId(String::from(s))
    }
}

/// One cluster: size `n`, an `n × p` covariate matrix, and length-`n`
/// treatment and outcome vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub id: ClusterId,
    pub covariates: Vec<Vec<f64>>,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
}

impl ClusterData {
    pub fn new(
        id: ClusterId,
        covariates: Vec<Vec<f64>>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n == 0 {
            return Err(Error::config(alloc::format!("cluster {id} is empty")));
        }
        if covariates.len() != n || outcome.len() != n {
            return Err(Error::config(alloc::format!(
                "cluster {id}: covariate rows ({}), treatments ({n}), outcomes ({}) must agree",
                covariates.len(),
                outcome.len()
            )));
        }
        let p = covariates[0].len();
        if covariates.iter().any(|row| row.len() != p) {
            return Err(Error::config(alloc::format!(
                "cluster {id}: ragged covariate rows"
            )));
        }
        if covariates.iter().flatten().any(|v| !v.is_finite())
            || outcome.iter().any(|v| !v.is_finite())
        {
            return Err(Error::config(alloc::format!(
                "cluster {id}: non-finite covariate or outcome"
            )));
        }
        Ok(ClusterData {
            id,
            covariates,
            treatment,
            outcome,
        })
    }

    /// Cluster size `n`.
    pub fn size(&self) -> usize {
        self.treatment.len()
    }

    /// Covariate dimension `p`.
    pub fn covariate_dim(&self) -> usize {
        self.covariates[0].len()
    }

    /// Number of treated members, `f(A)`.
    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&a| a).count()
    }

    /// True when every covariate row is identical (permits the
    /// one-evaluation-per-stratum shortcut in exhaustive enumeration).
    pub fn covariates_identical(&self) -> bool {
        self.covariates.windows(2).all(|w| w[0] == w[1])
    }
}

/// Checks that every cluster has covariate dimension `p`.
pub(crate) fn check_dims(clusters: &[ClusterData], p: usize) -> Result<()> {
    for c in clusters {
        if c.covariate_dim() != p {
            return Err(Error::config(alloc::format!(
                "cluster {}: covariate dimension {} does not match model dimension {p}",
                c.id,
                c.covariate_dim()
            )));
        }
    }
    Ok(())
}
