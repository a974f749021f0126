//! Inverse-probability-weighted estimators of policy means, overall
//! effects, and spillover effects, with sandwich-variance Wald intervals.
//!
//! The point estimator of the population mean under policy `α` is
//!
//! `μ̂(α) = M⁻¹ Σ_i Ȳ_i · ω̂(A_i, N_i, α) / Pr̂(A_i | L_i, N_i)`,
//!
//! replacing `Ȳ_i` by the arm-restricted mean `Ȳ_{t,i}` for `μ̂_t(α)`.
//! Contrasts are differences of two point estimates. Confidence intervals
//! come from the stacked M-estimation sandwich in [`crate::mestimation`].

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::data::ClusterData;
use crate::error::{Error, Result};
use crate::fmath;
use crate::mestimation::{sandwich, StackContext};
use crate::policy::{
    estimate_omega_exhaustive, estimate_omega_with_registry, observed_strata, solve_gamma0,
    CounterfactualWeights, PolicySolution, SampleRegistry, StrataSelection, DEFAULT_SIZE_CAP,
};
use crate::propensity::{cluster_propensity, PropensityParams};
use crate::quad::QuadratureRule;

/// Identifies which estimand a specification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimandKind {
    /// Population mean `μ(α)`.
    Mu,
    /// Mean among the untreated, `μ₀(α)`.
    Mu0,
    /// Mean among the treated, `μ₁(α)`.
    Mu1,
    /// Overall effect `OE(α, α′) = μ(α) − μ(α′)`.
    OverallEffect,
    /// Spillover effect when untreated, `SE₀(α, α′)`.
    Spillover0,
    /// Spillover effect when treated, `SE₁(α, α′)`.
    Spillover1,
    /// Independent-assignment comparator mean `μ^TV(α)`.
    MuTypeB,
    /// Independent-assignment comparator contrast `OE^TV(α, α′)`.
    OverallEffectTypeB,
}

impl EstimandKind {
    pub fn is_contrast(self) -> bool {
        matches!(
            self,
            EstimandKind::OverallEffect
                | EstimandKind::Spillover0
                | EstimandKind::Spillover1
                | EstimandKind::OverallEffectTypeB
        )
    }

    pub fn is_type_b(self) -> bool {
        matches!(self, EstimandKind::MuTypeB | EstimandKind::OverallEffectTypeB)
    }

    /// Arm restriction on the outcome average, when any.
    pub fn arm(self) -> Option<u8> {
        match self {
            EstimandKind::Mu0 | EstimandKind::Spillover0 => Some(0),
            EstimandKind::Mu1 | EstimandKind::Spillover1 => Some(1),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EstimandKind::Mu => "mu",
            EstimandKind::Mu0 => "mu0",
            EstimandKind::Mu1 => "mu1",
            EstimandKind::OverallEffect => "oe",
            EstimandKind::Spillover0 => "se0",
            EstimandKind::Spillover1 => "se1",
            EstimandKind::MuTypeB => "mu_typeb",
            EstimandKind::OverallEffectTypeB => "oe_typeb",
        }
    }
}

/// An estimand: kind, policy `α`, and (for contrasts) comparator `α′`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimandSpec {
    pub kind: EstimandKind,
    pub alpha: f64,
    pub alpha_prime: Option<f64>,
}

impl EstimandSpec {
    pub fn new(kind: EstimandKind, alpha: f64, alpha_prime: Option<f64>) -> Result<Self> {
        let check = |a: f64| -> Result<()> {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::domain(format!(
                    "alpha must lie strictly inside (0,1), got {a}"
                )));
            }
            Ok(())
        };
        check(alpha)?;
        if kind.is_contrast() {
            let ap = alpha_prime.ok_or_else(|| {
                Error::config(format!("{} requires alpha_prime", kind.label()))
            })?;
            check(ap)?;
        } else if alpha_prime.is_some() {
            return Err(Error::config(format!(
                "{} does not take alpha_prime",
                kind.label()
            )));
        }
        Ok(EstimandSpec {
            kind,
            alpha,
            alpha_prime,
        })
    }

    pub fn mean(alpha: f64) -> Self {
        EstimandSpec {
            kind: EstimandKind::Mu,
            alpha,
            alpha_prime: None,
        }
    }

    pub fn overall_effect(alpha: f64, alpha_prime: f64) -> Self {
        EstimandSpec {
            kind: EstimandKind::OverallEffect,
            alpha,
            alpha_prime: Some(alpha_prime),
        }
    }

    /// `mu(0.4)`, `oe(0.5,0.4)`, … for output tables.
    pub fn describe(&self) -> String {
        match self.alpha_prime {
            Some(ap) => format!("{}({},{})", self.kind.label(), self.alpha, ap),
            None => format!("{}({})", self.kind.label(), self.alpha),
        }
    }
}

/// Arithmetic mean of the cluster's outcomes, `Ȳ_i`.
pub fn cluster_avg_outcome(cluster: &ClusterData) -> f64 {
    let n = cluster.size() as f64;
    cluster.outcome.iter().sum::<f64>() / n
}

/// Mean outcome among members with treatment `t`; zero when the cluster has
/// no such member.
pub fn cluster_avg_outcome_by_arm(cluster: &ClusterData, t: u8) -> f64 {
    debug_assert!(t <= 1);
    let want = t == 1;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (&a, &y) in cluster.treatment.iter().zip(&cluster.outcome) {
        if a == want {
            acc += y;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

fn single_point(
    kind: EstimandKind,
    alpha: f64,
    clusters: &[ClusterData],
    params: &PropensityParams,
    weights: Option<&CounterfactualWeights>,
    rule: &QuadratureRule,
) -> Result<f64> {
    let mut acc = 0.0;
    for cluster in clusters {
        let n = cluster.size();
        let f = cluster.treated_count();
        let prop = cluster_propensity(params, cluster, &cluster.treatment, rule)?;
        if prop == 0.0 {
            return Err(Error::Positivity(cluster.id.0.clone()));
        }
        let w = if kind.is_type_b() {
            fmath::powi(alpha, f as i32) * fmath::powi(1.0 - alpha, (n - f) as i32)
        } else {
            weights
                .ok_or(Error::Coverage { n, s: f })?
                .omega_vector(n, f)?
        };
        let ybar = match kind.arm() {
            None => cluster_avg_outcome(cluster),
            Some(t) => cluster_avg_outcome_by_arm(cluster, t),
        };
        acc += ybar * w / prop;
    }
    Ok(acc / clusters.len() as f64)
}

/// IPW point estimate. Contrasts are computed as the difference of the two
/// single-policy estimates; `weights_prime` supplies the `α′` probabilities
/// and may be omitted for single-policy and type-B kinds.
pub fn ipw_point_estimate(
    spec: &EstimandSpec,
    clusters: &[ClusterData],
    params: &PropensityParams,
    rule: &QuadratureRule,
    weights: Option<&CounterfactualWeights>,
    weights_prime: Option<&CounterfactualWeights>,
) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::config("no clusters"));
    }
    if spec.kind.is_contrast() {
        let ap = spec
            .alpha_prime
            .ok_or_else(|| Error::config("contrast requires alpha_prime"))?;
        let lhs = single_point(spec.kind, spec.alpha, clusters, params, weights, rule)?;
        let rhs = single_point(
            spec.kind,
            ap,
            clusters,
            params,
            weights_prime.or(weights),
            rule,
        )?;
        Ok(lhs - rhs)
    } else {
        single_point(spec.kind, spec.alpha, clusters, params, weights, rule)
    }
}

/// Point estimate, sandwich standard error, and Wald interval for one
/// estimand.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub spec: EstimandSpec,
    pub point: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Stacked parameter estimate, ordered as in `theta_labels`.
    pub theta: Vec<f64>,
    pub theta_labels: Vec<String>,
    pub target_variance: f64,
    pub sigma_diag: Vec<f64>,
    /// Target row of `Σ̂` (covariances of every coordinate with the target).
    pub sigma_target_row: Vec<f64>,
    /// Full row-major `Σ̂` when the stack is small enough to ship around.
    pub sigma_full: Option<Vec<f64>>,
    pub u_condition: f64,
    pub k: Option<usize>,
    pub seed: u64,
}

/// Stacks larger than this only report the Σ̂ diagonal and target row.
pub const SIGMA_FULL_LIMIT: usize = 512;

/// Full pipeline for one estimand: solve `γ₀α`, estimate ω, stack, and
/// build a Wald interval at `level`. `k = None` selects exhaustive ω
/// estimation. Deterministic given `(data, spec, k, seed, rule, level)`.
pub fn estimate_with_ci(
    spec: &EstimandSpec,
    clusters: &[ClusterData],
    params: &PropensityParams,
    rule: &QuadratureRule,
    k: Option<usize>,
    seed: u64,
    level: f64,
) -> Result<EstimateReport> {
    let reports = estimate_batch(
        core::slice::from_ref(spec),
        clusters,
        params,
        rule,
        k,
        seed,
        level,
    )?;
    Ok(reports.into_iter().next().expect("one report per spec"))
}

/// Batch pipeline sharing the fit, the γ solutions, the ω registry, and the
/// memoized ψ tables across estimands.
pub fn estimate_batch(
    specs: &[EstimandSpec],
    clusters: &[ClusterData],
    params: &PropensityParams,
    rule: &QuadratureRule,
    k: Option<usize>,
    seed: u64,
    level: f64,
) -> Result<Vec<EstimateReport>> {
    if clusters.is_empty() {
        return Err(Error::config("no clusters"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    for spec in specs {
        // Re-validate combinations arriving from struct literals.
        EstimandSpec::new(spec.kind, spec.alpha, spec.alpha_prime)?;
    }
    let z = fmath::normal_quantile(0.5 + level / 2.0);

    // Distinct policies across specs, in order of first appearance.
    let mut alphas: Vec<f64> = Vec::new();
    let mut register = |a: f64| {
        if !alphas.iter().any(|&x| x == a) {
            alphas.push(a);
        }
    };
    for spec in specs {
        if !spec.kind.is_type_b() {
            register(spec.alpha);
            if let Some(ap) = spec.alpha_prime {
                register(ap);
            }
        }
    }

    let mut solutions: Vec<PolicySolution> = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        solutions.push(solve_gamma0(params, alpha, clusters, rule, 1e-10)?);
    }
    let registry = match k {
        Some(k) => {
            let pairs = observed_strata(clusters)
                .into_iter()
                .flat_map(|(n, set)| set.into_iter().map(move |s| (n, s)))
                .collect::<Vec<_>>();
            Some(Arc::new(SampleRegistry::build(pairs, k, seed)?))
        }
        None => None,
    };
    let mut weights: Vec<CounterfactualWeights> = Vec::with_capacity(alphas.len());
    for sol in &solutions {
        let w = match &registry {
            Some(reg) => estimate_omega_with_registry(
                params,
                sol,
                clusters,
                rule,
                Arc::clone(reg),
                StrataSelection::Observed,
            )?,
            None => estimate_omega_exhaustive(params, sol, clusters, rule, DEFAULT_SIZE_CAP)?,
        };
        weights.push(w);
    }

    let policy_index = |a: f64| -> usize {
        alphas
            .iter()
            .position(|&x| x == a)
            .expect("policy registered")
    };

    let mut reports = Vec::with_capacity(specs.len());
    let mut shared_ctx: Option<StackContext<'_>> = None;
    for spec in specs {
        let (ctx_policies, ctx_weights) = if spec.kind.is_type_b() {
            (Vec::new(), Vec::new())
        } else {
            let mut ps = Vec::new();
            let mut ws = Vec::new();
            let i = policy_index(spec.alpha);
            ps.push(solutions[i].clone());
            ws.push(weights[i].clone());
            if let Some(ap) = spec.alpha_prime {
                let j = policy_index(ap);
                ps.push(solutions[j].clone());
                ws.push(weights[j].clone());
            }
            (ps, ws)
        };
        let mut ctx = StackContext::new(
            clusters,
            rule,
            params.clone(),
            ctx_policies,
            ctx_weights,
            spec.clone(),
            DEFAULT_SIZE_CAP,
        )?;
        if let Some(prev) = &shared_ctx {
            ctx.share_cache_from(prev);
        }
        let layout = ctx.standard_layout()?;
        let theta = ctx.plugin_theta(&layout)?;
        let result = sandwich(&theta, &ctx)?;
        let q = theta.len();
        let t_idx = layout.target_index().unwrap_or(q - 1);
        let point = theta.values[t_idx];
        let std_error = fmath::sqrt(result.variance_of_target);
        let labels = layout.labels(&ctx.policy_alphas());
        let sigma_diag: Vec<f64> = (0..q).map(|i| result.sigma_hat[(i, i)]).collect();
        let sigma_target_row: Vec<f64> = (0..q).map(|j| result.sigma_hat[(t_idx, j)]).collect();
        let sigma_full = (q <= SIGMA_FULL_LIMIT).then(|| {
            let mut flat = Vec::with_capacity(q * q);
            for i in 0..q {
                flat.extend_from_slice(result.sigma_hat.row(i));
            }
            flat
        });
        reports.push(EstimateReport {
            spec: spec.clone(),
            point,
            std_error,
            ci_lower: point - z * std_error,
            ci_upper: point + z * std_error,
            level,
            theta: theta.values.clone(),
            theta_labels: labels,
            target_variance: result.variance_of_target,
            sigma_diag,
            sigma_target_row,
            sigma_full,
            u_condition: result.u_condition,
            k,
            seed,
        });
        shared_ctx = Some(ctx);
    }
    Ok(reports)
}
