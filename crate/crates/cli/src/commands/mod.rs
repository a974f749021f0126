pub mod estimate;
pub mod fit;
pub mod simulate;
pub mod truth;

use anyhow::Result;
use cipw_core::propensity::{fit_mle, initial_params, FitOptions, MleFit};
use cipw_core::{ClusterData, QuadratureRule};

pub(crate) fn fit_model(
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    tol: f64,
    max_iter: usize,
) -> Result<MleFit> {
    let init = initial_params(clusters)?;
    let fit = fit_mle(clusters, rule, &init, &FitOptions { tol, max_iter })?;
    Ok(fit)
}

/// Default estimand grid of a run: `mu`, `mu0`, `mu1` per policy, then
/// `oe`, `se0`, `se1` per contrast, and optionally the
/// independent-assignment comparators.
pub(crate) fn estimand_grid(
    alphas: &[f64],
    contrasts: &[(f64, f64)],
    type_b: bool,
) -> Vec<cipw_core::EstimandSpec> {
    use cipw_core::{EstimandKind, EstimandSpec};
    let mut specs = Vec::new();
    for &kind in &[EstimandKind::Mu, EstimandKind::Mu0, EstimandKind::Mu1] {
        for &a in alphas {
            specs.push(EstimandSpec {
                kind,
                alpha: a,
                alpha_prime: None,
            });
        }
    }
    for &kind in &[
        EstimandKind::OverallEffect,
        EstimandKind::Spillover0,
        EstimandKind::Spillover1,
    ] {
        for &(a, b) in contrasts {
            specs.push(EstimandSpec {
                kind,
                alpha: a,
                alpha_prime: Some(b),
            });
        }
    }
    if type_b {
        for &a in alphas {
            specs.push(EstimandSpec {
                kind: EstimandKind::MuTypeB,
                alpha: a,
                alpha_prime: None,
            });
        }
        for &(a, b) in contrasts {
            specs.push(EstimandSpec {
                kind: EstimandKind::OverallEffectTypeB,
                alpha: a,
                alpha_prime: Some(b),
            });
        }
    }
    specs
}
