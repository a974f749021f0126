//! Counterfactual policies: intercept solving and counterfactual
//! probabilities `ω(s, n, α)`.
//!
//! A policy `α` keeps the fitted slopes and random-intercept spread but
//! replaces the intercept with the `γ₀α` at which the population marginal
//! probability of treatment equals `α`. The probability that a size-`n`
//! cluster ends up with `s` treated members under the policy,
//! `ω(s, n, α)`, is then estimated by averaging counterfactual cluster
//! propensity scores over the clusters of size `n` — summing over every
//! vector of the stratum, or over a seeded random subset of `k` vectors
//! up-weighted by `C(n,s)/k`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::comb;
use crate::data::{check_dims, ClusterData};
use crate::error::{Error, Result};
use crate::fmath;
use crate::propensity::{LogBernoulliGrid, PropensityParams};
use crate::quad::QuadratureRule;
use crate::rng::{stream, Domain};
use crate::root::brent_expanding;

/// Default cap on exhaustive enumeration (`2^n` vectors per cluster).
pub const DEFAULT_SIZE_CAP: usize = 25;

/// A policy `α` with its solved counterfactual intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    pub alpha: f64,
    pub gamma0: f64,
    pub solver_residual: f64,
}

/// Empirical coverage identity: mean over clusters and members of
/// `∫ expit(γ₀ + β̂₁·L_ij + b) dΦ(b; σ̂)`.
pub fn marginal_alpha(
    params: &PropensityParams,
    gamma0: f64,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
) -> Result<f64> {
    params.validate()?;
    check_dims(clusters, params.dim())?;
    if clusters.is_empty() {
        return Err(Error::config("no clusters"));
    }
    let mut acc = 0.0;
    for cluster in clusters {
        let grid = LogBernoulliGrid::new(gamma0, &params.beta1, params.sigma, cluster, rule)?;
        acc += grid.mean_marginal_probability();
    }
    Ok(acc / clusters.len() as f64)
}

/// Solves `marginal_alpha(γ₀) = α` for `γ₀` by bracketed root finding on
/// `[-40, 40]`, expanding geometrically if needed. The map is strictly
/// increasing in `γ₀`, so the root is unique.
pub fn solve_gamma0(
    params: &PropensityParams,
    alpha: f64,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    tol: f64,
) -> Result<PolicySolution> {
    if !(0.0..=1.0).contains(&alpha) || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::domain(alloc::format!(
            "alpha must lie strictly inside (0,1), got {alpha}"
        )));
    }
    params.validate()?;
    check_dims(clusters, params.dim())?;
    // Flatten the covariate contributions once; the solver then only
    // re-evaluates expits.
    let mut contribs: Vec<f64> = Vec::new();
    let mut cluster_sizes: Vec<usize> = Vec::new();
    for cluster in clusters {
        cluster_sizes.push(cluster.size());
        for row in &cluster.covariates {
            let mut c = 0.0;
            for (b, l) in params.beta1.iter().zip(row) {
                c += b * l;
            }
            contribs.push(c);
        }
    }
    let scale = core::f64::consts::SQRT_2 * params.sigma;
    let nodes: Vec<f64> = rule.nodes().iter().map(|&x| scale * x).collect();
    let wbar: Vec<f64> = rule
        .weights()
        .iter()
        .map(|&w| w / rule.weight_sum())
        .collect();
    let m = clusters.len() as f64;
    let f = |gamma: f64| -> f64 {
        let mut total = 0.0;
        let mut offset = 0;
        for &n in &cluster_sizes {
            let mut cluster_acc = 0.0;
            for &c in &contribs[offset..offset + n] {
                let mut member = 0.0;
                for (&b, &w) in nodes.iter().zip(&wbar) {
                    member += w * fmath::expit(gamma + c + b);
                }
                cluster_acc += member;
            }
            total += cluster_acc / n as f64;
            offset += n;
        }
        total / m - alpha
    };
    let (gamma0, residual) = brent_expanding(f, -40.0, 40.0)?;
    if fmath::abs(residual) > tol {
        return Err(Error::Solver(alloc::format!(
            "coverage residual {residual:e} exceeds tolerance {tol:e} at gamma0 = {gamma0}"
        )));
    }
    Ok(PolicySolution {
        alpha,
        gamma0,
        solver_residual: residual,
    })
}

/// Counterfactual cluster propensity score: the propensity integral with
/// `γ̂₀α` in place of `β̂₀`.
pub fn counterfactual_cluster_propensity(
    params: &PropensityParams,
    solution: &PolicySolution,
    cluster: &ClusterData,
    a: &[bool],
    rule: &QuadratureRule,
) -> Result<f64> {
    params.validate()?;
    if a.len() != cluster.size() {
        return Err(Error::config(alloc::format!(
            "treatment vector length {} does not match cluster size {}",
            a.len(),
            cluster.size()
        )));
    }
    let grid = LogBernoulliGrid::new(solution.gamma0, &params.beta1, params.sigma, cluster, rule)?;
    Ok(fmath::exp(grid.log_integral_mask(a)))
}

/// Which strata of each observed cluster size get an ω estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrataSelection {
    /// Only strata `(n, s)` with an observed cluster of size `n` and
    /// treated count `s`.
    Observed,
    /// All `s = 0..=n` for every observed size.
    All,
}

/// Seeded sub-samples of treatment vectors, one entry per stratum `(n, s)`.
///
/// Built once per run and shared by the ω estimators and every ψ-stack
/// evaluation, so the estimating functions all see the same vectors.
#[derive(Debug, Clone)]
pub struct SampleRegistry {
    k: usize,
    seed: u64,
    samples: BTreeMap<(usize, usize), StratumSample>,
}

#[derive(Debug, Clone)]
pub struct StratumSample {
    /// Sampled vectors as sorted treated-index lists, ascending by
    /// combinatorial rank.
    pub vectors: Vec<Vec<u32>>,
    /// `C(n, s)`.
    pub stratum_size: u128,
    /// `C(n, s) / k_{s,n}`.
    pub upweight: f64,
}

impl SampleRegistry {
    /// Samples `min(k, C(n,s))` vectors without replacement for every
    /// requested stratum. The stream for stratum `(n, s)` depends only on
    /// `(seed, n, s)`, so registries agree across policies and runs.
    pub fn build(
        strata: impl IntoIterator<Item = (usize, usize)>,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let mut samples = BTreeMap::new();
        for (n, s) in strata {
            if s > n {
                return Err(Error::config(alloc::format!(
                    "stratum ({n}, {s}) has more treated than members"
                )));
            }
            samples.entry((n, s)).or_insert_with(|| {
                let size = comb::binomial(n, s).expect("size within cap");
                let mut rng = stream(seed, Domain::StratumSample, ((n as u64) << 16) | s as u64);
                let ranks = comb::sample_ranks(size, k, &mut rng);
                let k_eff = ranks.len();
                let vectors = ranks
                    .into_iter()
                    .map(|r| comb::unrank(n, s, r).expect("rank in stratum"))
                    .collect();
                StratumSample {
                    vectors,
                    stratum_size: size,
                    upweight: size as f64 / k_eff as f64,
                }
            });
        }
        Ok(SampleRegistry { k, seed, samples })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, n: usize, s: usize) -> Option<&StratumSample> {
        self.samples.get(&(n, s))
    }

    pub fn strata(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.samples.keys().copied()
    }
}

/// How stratum sums over treatment vectors are evaluated.
#[derive(Clone)]
pub(crate) enum OmegaMode {
    Exhaustive { size_cap: usize },
    Sampled(Arc<SampleRegistry>),
}

impl OmegaMode {
    /// Per-cluster stratum sums `T_i(s)`: the (up-weighted) sum of
    /// counterfactual propensities over the stratum's evaluated vectors.
    pub(crate) fn stratum_sums(
        &self,
        grid: &LogBernoulliGrid,
        cluster: &ClusterData,
        strata: &[usize],
    ) -> Result<Vec<f64>> {
        let n = cluster.size();
        let mut out = Vec::with_capacity(strata.len());
        match self {
            OmegaMode::Exhaustive { size_cap } => {
                if n > *size_cap {
                    return Err(Error::SizeCapExceeded { n, cap: *size_cap });
                }
                let identical = cluster.covariates_identical();
                for &s in strata {
                    let count = comb::binomial(n, s)?;
                    let total = if identical {
                        // Every vector of the stratum carries the same
                        // propensity; evaluate one and scale.
                        let eta_sum = grid.eta[0] * s as f64;
                        count as f64 * fmath::exp(grid.log_integral_sum(eta_sum, s))
                    } else {
                        let mut acc = 0.0;
                        for r in 0..count {
                            let v = comb::unrank(n, s, r)?;
                            acc += fmath::exp(grid.log_integral_support(&v));
                        }
                        acc
                    };
                    out.push(total);
                }
            }
            OmegaMode::Sampled(registry) => {
                for &s in strata {
                    let sample = registry.get(n, s).ok_or(Error::Coverage { n, s })?;
                    let mut acc = 0.0;
                    for v in &sample.vectors {
                        acc += fmath::exp(grid.log_integral_support(v));
                    }
                    out.push(sample.upweight * acc);
                }
            }
        }
        Ok(out)
    }
}

/// Counterfactual probabilities `ω(s, n, α)` for one policy, stored per
/// cluster size. Entries are `None` for strata that were not estimated.
#[derive(Debug, Clone)]
pub struct CounterfactualWeights {
    pub alpha: f64,
    per_size: BTreeMap<usize, Vec<Option<f64>>>,
    /// Sub-sample cap; `None` means exhaustive.
    pub k: Option<usize>,
    /// Seed of the sampling streams when sub-sampled.
    pub seed: Option<u64>,
    registry: Option<Arc<SampleRegistry>>,
}

impl CounterfactualWeights {
    /// `ω(s, n, α)`; `Coverage` error when that stratum was not estimated.
    pub fn omega(&self, n: usize, s: usize) -> Result<f64> {
        self.per_size
            .get(&n)
            .and_then(|v| v.get(s).copied().flatten())
            .ok_or(Error::Coverage { n, s })
    }

    /// Per-vector weight `ω(a, n, α) = C(n, f(a))⁻¹ ω(f(a), n, α)`.
    pub fn omega_vector(&self, n: usize, s: usize) -> Result<f64> {
        Ok(self.omega(n, s)? / comb::binomial_f64(n, s)?)
    }

    /// Estimated strata of size `n`, in ascending `s` order.
    pub fn strata_for_size(&self, n: usize) -> Vec<usize> {
        self.per_size
            .get(&n)
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter_map(|(s, o)| o.map(|_| s))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_size.keys().copied()
    }

    /// Full `(ω(0,n,α), …, ω(n,n,α))` when every stratum was estimated.
    pub fn distribution(&self, n: usize) -> Option<Vec<f64>> {
        let v = self.per_size.get(&n)?;
        v.iter().copied().collect::<Option<Vec<f64>>>()
    }

    pub fn registry(&self) -> Option<&Arc<SampleRegistry>> {
        self.registry.as_ref()
    }
}

fn sizes_with_clusters(clusters: &[ClusterData]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        by_size.entry(c.size()).or_default().push(i);
    }
    by_size
}

/// Observed strata: the `(n, f(A_i))` pairs present in the data.
pub fn observed_strata(clusters: &[ClusterData]) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut strata: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for c in clusters {
        strata.entry(c.size()).or_default().insert(c.treated_count());
    }
    strata
}

fn wanted_strata(
    clusters: &[ClusterData],
    selection: StrataSelection,
) -> BTreeMap<usize, Vec<usize>> {
    match selection {
        StrataSelection::All => sizes_with_clusters(clusters)
            .into_keys()
            .map(|n| (n, (0..=n).collect()))
            .collect(),
        StrataSelection::Observed => observed_strata(clusters)
            .into_iter()
            .map(|(n, set)| (n, set.into_iter().collect()))
            .collect(),
    }
}

fn average_stratum_sums(
    params: &PropensityParams,
    solution: &PolicySolution,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    mode: &OmegaMode,
    wanted: &BTreeMap<usize, Vec<usize>>,
) -> Result<BTreeMap<usize, Vec<Option<f64>>>> {
    params.validate()?;
    check_dims(clusters, params.dim())?;
    let by_size = sizes_with_clusters(clusters);
    let mut per_size = BTreeMap::new();
    for (&n, members) in &by_size {
        let strata = &wanted[&n];
        let mut sums = vec![0.0; strata.len()];
        for &i in members {
            let grid = LogBernoulliGrid::new(
                solution.gamma0,
                &params.beta1,
                params.sigma,
                &clusters[i],
                rule,
            )?;
            for (acc, t) in sums
                .iter_mut()
                .zip(mode.stratum_sums(&grid, &clusters[i], strata)?)
            {
                *acc += t;
            }
        }
        let count = members.len() as f64;
        let mut row = vec![None; n + 1];
        for (&s, &total) in strata.iter().zip(&sums) {
            row[s] = Some(total / count);
        }
        per_size.insert(n, row);
    }
    Ok(per_size)
}

/// Exhaustive ω estimator: for each observed size `n` and every
/// `s = 0..=n`, averages the full stratum sums over the clusters of that
/// size. Errors when a size exceeds `size_cap`.
pub fn estimate_omega_exhaustive(
    params: &PropensityParams,
    solution: &PolicySolution,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    size_cap: usize,
) -> Result<CounterfactualWeights> {
    let mode = OmegaMode::Exhaustive { size_cap };
    let wanted = wanted_strata(clusters, StrataSelection::All);
    let per_size = average_stratum_sums(params, solution, clusters, rule, &mode, &wanted)?;
    Ok(CounterfactualWeights {
        alpha: solution.alpha,
        per_size,
        k: None,
        seed: None,
        registry: None,
    })
}

/// Sub-sampled ω estimator: evaluates `min(k, C(n,s))` seeded vectors per
/// stratum and up-weights by `C(n,s)/k`. The registry of sampled vectors is
/// recorded for reuse by the variance stack.
pub fn estimate_omega_subsampled(
    params: &PropensityParams,
    solution: &PolicySolution,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    k: usize,
    seed: u64,
    selection: StrataSelection,
) -> Result<CounterfactualWeights> {
    let wanted = wanted_strata(clusters, selection);
    let pairs = wanted
        .iter()
        .flat_map(|(&n, ss)| ss.iter().map(move |&s| (n, s)));
    let registry = Arc::new(SampleRegistry::build(pairs, k, seed)?);
    estimate_omega_with_registry(params, solution, clusters, rule, registry, selection)
}

/// As [`estimate_omega_subsampled`], but with an externally built registry
/// (shared across policies).
pub fn estimate_omega_with_registry(
    params: &PropensityParams,
    solution: &PolicySolution,
    clusters: &[ClusterData],
    rule: &QuadratureRule,
    registry: Arc<SampleRegistry>,
    selection: StrataSelection,
) -> Result<CounterfactualWeights> {
    let wanted = wanted_strata(clusters, selection);
    let mode = OmegaMode::Sampled(Arc::clone(&registry));
    let per_size = average_stratum_sums(params, solution, clusters, rule, &mode, &wanted)?;
    Ok(CounterfactualWeights {
        alpha: solution.alpha,
        per_size,
        k: Some(registry.k()),
        seed: Some(registry.seed()),
        registry: Some(registry),
    })
}

/// Binomial stratum masses `C(n,s) αˢ (1−α)^{n−s}` of the
/// independent-assignment ("type B") policy.
pub fn type_b_weights(alpha: f64, n: usize) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0,1]");
    (0..=n)
        .map(|s| {
            comb::binomial_f64(n, s).expect("size within cap")
                * fmath::powi(alpha, s as i32)
                * fmath::powi(1.0 - alpha, (n - s) as i32)
        })
        .collect()
}
