//! Data-generating process and empirical truth determination for the
//! replication harness.
//!
//! One simulated cluster is drawn in four steps: a categorical size, member
//! covariates `L₁ ~ N(m₁, s₁)` and `L₂ ~ N(L*, s₂)` around a cluster-level
//! `L* ~ N(m*, s*)`, treatments from the logistic random-intercept model,
//! and Bernoulli outcomes whose mean depends on own treatment and the
//! fraction of treated others.
//!
//! "Truth" for the benchmark estimands is determined empirically, by
//! simulation alone: a grid search recovers the counterfactual intercept
//! achieving coverage `α`, stratum frequencies of simulated counterfactual
//! treatment vectors estimate `ω(s,n,α)`, and potential-outcome means are
//! tabulated under canonical treatment vectors (`s` ones then zeros). A
//! faster quadrature-based route computes the same table through the model
//! machinery; the two routes agree within Monte-Carlo error and serve as
//! mutual cross-checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ClusterData, ClusterId};
use crate::error::{Error, Result};
use crate::estimators::{EstimandKind, EstimandSpec};
use crate::fmath;
use crate::policy::{estimate_omega_exhaustive, solve_gamma0, type_b_weights};
use crate::propensity::PropensityParams;
use crate::quad::QuadratureRule;
use crate::rng::{derive_seed, stream, Domain};

/// Discrete cluster-size distribution.
#[derive(Debug, Clone)]
pub struct SizeDistribution {
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
}

impl SizeDistribution {
    pub fn new(support: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::config("size support and probabilities must pair up"));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::config("size probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "size probabilities sum to {total}, expected 1"
            )));
        }
        Ok(SizeDistribution { support, probs })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (&n, &p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return n;
            }
        }
        *self.support.last().expect("nonempty support")
    }
}

/// Covariate model: `L₁ ~ N(l1_mean, l1_scale)`, cluster-level
/// `L* ~ N(lstar_mean, lstar_scale)`, `L₂ ~ N(L*, l2_scale)`.
#[derive(Debug, Clone)]
pub struct CovariateModel {
    pub l1_mean: f64,
    pub l1_scale: f64,
    pub lstar_mean: f64,
    pub lstar_scale: f64,
    pub l2_scale: f64,
    /// When set, the scale fields are variances rather than standard
    /// deviations.
    pub scale_is_variance: bool,
}

impl CovariateModel {
    fn sd(&self, scale: f64) -> f64 {
        if self.scale_is_variance {
            fmath::sqrt(scale)
        } else {
            scale
        }
    }
}

/// Coefficients of the Bernoulli outcome model: the linear predictor is
/// `intercept + l1·L₁ + l2·L₂ + own·a_j + spillover·g + interaction·a_j·g`
/// with `g` the mean treatment of the other members.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub intercept: f64,
    pub l1: f64,
    pub l2: f64,
    pub own: f64,
    pub spillover: f64,
    pub interaction: f64,
}

/// Full configuration of the data-generating process.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub clusters: usize,
    pub sizes: SizeDistribution,
    pub covariates: CovariateModel,
    pub treatment: PropensityParams,
    pub outcome: OutcomeModel,
    pub seed: u64,
}

impl DgpConfig {
    /// Benchmark configuration of the replication study: sizes
    /// {8, 22, 40} with probabilities {0.4, 0.35, 0.25}, treatment
    /// parameters `(0.75, −0.015, −0.025, σ=0.75)`.
    pub fn benchmark() -> Self {
        DgpConfig {
            clusters: 125,
            sizes: SizeDistribution::new(vec![8, 22, 40], vec![0.4, 0.35, 0.25])
                .expect("valid distribution"),
            covariates: CovariateModel {
                l1_mean: 40.0,
                l1_scale: 5.0,
                lstar_mean: 6.0,
                lstar_scale: 1.0,
                l2_scale: 0.2,
                scale_is_variance: false,
            },
            treatment: PropensityParams {
                beta0: 0.75,
                beta1: vec![-0.015, -0.025],
                sigma: 0.75,
            },
            outcome: OutcomeModel {
                intercept: -0.1,
                l1: -0.05,
                l2: 0.5,
                own: -0.5,
                spillover: 0.2,
                interaction: -0.25,
            },
            seed: 0,
        }
    }

    /// Benchmark with small sizes {4, 8, 12}; same covariate, treatment,
    /// and outcome models. Cheap enough for exhaustive enumeration.
    pub fn fast_benchmark() -> Self {
        let mut cfg = DgpConfig::benchmark();
        cfg.sizes =
            SizeDistribution::new(vec![4, 8, 12], vec![0.4, 0.35, 0.25]).expect("valid");
        cfg
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_clusters(mut self, m: usize) -> Self {
        self.clusters = m;
        self
    }

    pub fn with_sizes(mut self, support: Vec<usize>, probs: Vec<f64>) -> Self {
        self.sizes = SizeDistribution::new(support, probs).expect("valid distribution");
        self
    }

    fn l1_sd(&self) -> f64 {
        self.covariates.sd(self.covariates.l1_scale)
    }

    fn lstar_sd(&self) -> f64 {
        self.covariates.sd(self.covariates.lstar_scale)
    }

    fn l2_sd(&self) -> f64 {
        self.covariates.sd(self.covariates.l2_scale)
    }
}

fn draw_covariates<R: Rng>(cfg: &DgpConfig, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let lstar = Normal::new(cfg.covariates.lstar_mean, cfg.lstar_sd())
        .expect("valid normal")
        .sample(rng);
    let l1 = Normal::new(cfg.covariates.l1_mean, cfg.l1_sd()).expect("valid normal");
    let l2 = Normal::new(lstar, cfg.l2_sd()).expect("valid normal");
    (0..n)
        .map(|_| vec![l1.sample(rng), l2.sample(rng)])
        .collect()
}

fn draw_treatments<R: Rng>(
    intercept: f64,
    treatment: &PropensityParams,
    covariates: &[Vec<f64>],
    b: f64,
    rng: &mut R,
) -> Vec<bool> {
    covariates
        .iter()
        .map(|row| {
            let mut lp = intercept + b;
            for (c, l) in treatment.beta1.iter().zip(row) {
                lp += c * l;
            }
            rng.gen::<f64>() < fmath::expit(lp)
        })
        .collect()
}

fn outcome_probability(cfg: &DgpConfig, row: &[f64], own: bool, g: f64) -> f64 {
    let a = if own { 1.0 } else { 0.0 };
    let o = &cfg.outcome;
    fmath::expit(
        o.intercept + o.l1 * row[0] + o.l2 * row[1] + o.own * a + o.spillover * g
            + o.interaction * a * g,
    )
}

/// Treated fraction among the other members, `g(A_{−j})`; zero for a
/// cluster of one.
fn spillover_fraction(total_treated: usize, own: bool, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let others = total_treated - usize::from(own);
    others as f64 / (n - 1) as f64
}

/// Draws a full dataset; bit-reproducible per `(config, seed)`.
pub fn generate_dataset(cfg: &DgpConfig) -> Result<Vec<ClusterData>> {
    cfg.treatment.validate()?;
    let mut clusters = Vec::with_capacity(cfg.clusters);
    for i in 0..cfg.clusters {
        let idx = i as u64;
        let n = cfg.sizes.draw(&mut stream(cfg.seed, Domain::ClusterSize, idx));
        let covariates = draw_covariates(cfg, n, &mut stream(cfg.seed, Domain::Covariates, idx));
        let b = Normal::new(0.0, cfg.treatment.sigma)
            .expect("valid normal")
            .sample(&mut stream(cfg.seed, Domain::RandomIntercept, idx));
        let treatment = draw_treatments(
            cfg.treatment.beta0,
            &cfg.treatment,
            &covariates,
            b,
            &mut stream(cfg.seed, Domain::Treatment, idx),
        );
        let total: usize = treatment.iter().filter(|&&a| a).count();
        let mut outcome_rng = stream(cfg.seed, Domain::Outcome, idx);
        let outcome: Vec<f64> = covariates
            .iter()
            .zip(&treatment)
            .map(|(row, &a)| {
                let g = spillover_fraction(total, a, n);
                let p = outcome_probability(cfg, row, a, g);
                f64::from(u8::from(outcome_rng.gen::<f64>() < p))
            })
            .collect();
        clusters.push(ClusterData::new(
            ClusterId(format!("c{i:07}")),
            covariates,
            treatment,
            outcome,
        )?);
    }
    Ok(clusters)
}

/// Treated fraction over `m1` simulated clusters with intercept `gamma`.
fn simulated_coverage(cfg: &DgpConfig, gamma: f64, m1: u64, eval_seed: u64) -> f64 {
    let mut treated = 0u64;
    let mut total = 0u64;
    for i in 0..m1 {
        let n = cfg
            .sizes
            .draw(&mut stream(eval_seed, Domain::ClusterSize, i));
        let covariates = draw_covariates(cfg, n, &mut stream(eval_seed, Domain::Covariates, i));
        let b = Normal::new(0.0, cfg.treatment.sigma)
            .expect("valid normal")
            .sample(&mut stream(eval_seed, Domain::RandomIntercept, i));
        let a = draw_treatments(
            gamma,
            &cfg.treatment,
            &covariates,
            b,
            &mut stream(eval_seed, Domain::Treatment, i),
        );
        treated += a.iter().filter(|&&x| x).count() as u64;
        total += n as u64;
    }
    treated as f64 / total as f64
}

/// Grid determination of the counterfactual intercept: simulates the
/// treated fraction on a γ grid of the given spacing and averages the two
/// bracketing grid values. The treated fraction is monotone in γ, so the
/// bracket is located by expanding then bisecting on grid indices; each
/// grid point draws its own `m1` clusters.
pub fn truth_gamma0(cfg: &DgpConfig, alpha: f64, m1: u64, grid_step: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0,1)")));
    }
    if grid_step <= 0.0 {
        return Err(Error::config("grid step must be positive"));
    }
    let p_at = |w: i64| -> f64 {
        // Zig-zag encoding keeps negative grid indices distinct.
        let zz = ((w << 1) ^ (w >> 63)) as u64;
        let eval_seed = derive_seed(cfg.seed ^ 0x67616d, zz);
        simulated_coverage(cfg, w as f64 * grid_step, m1, eval_seed)
    };
    let bound = (40.0 / grid_step) as i64;
    let mut lo = -(5.0 / grid_step) as i64;
    let mut hi = (5.0 / grid_step) as i64;
    let mut p_lo = p_at(lo);
    let mut p_hi = p_at(hi);
    while p_lo >= alpha {
        lo *= 2;
        if lo < -bound {
            return Err(Error::Solver(format!(
                "coverage grid cannot reach below alpha = {alpha}"
            )));
        }
        p_lo = p_at(lo);
    }
    while p_hi <= alpha {
        hi *= 2;
        if hi > bound {
            return Err(Error::Solver(format!(
                "coverage grid cannot reach above alpha = {alpha}"
            )));
        }
        p_hi = p_at(hi);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let p_mid = p_at(mid);
        if p_mid < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo as f64 + hi as f64) * grid_step)
}

/// Stratum frequencies of counterfactual treatment vectors: simulates `m2`
/// clusters of fixed size `n` with intercept `gamma0` and tabulates the
/// treated counts.
pub fn truth_omega(cfg: &DgpConfig, alpha: f64, gamma0: f64, n: usize, m2: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::config("cluster size must be positive"));
    }
    let eval_seed = derive_seed(cfg.seed, 0x6f6d65_u64 ^ ((n as u64) << 24) ^ quantized(alpha));
    let mut counts = vec![0u64; n + 1];
    for i in 0..m2 {
        let covariates = draw_covariates(cfg, n, &mut stream(eval_seed, Domain::Covariates, i));
        let b = Normal::new(0.0, cfg.treatment.sigma)
            .expect("valid normal")
            .sample(&mut stream(eval_seed, Domain::RandomIntercept, i));
        let a = draw_treatments(
            gamma0,
            &cfg.treatment,
            &covariates,
            b,
            &mut stream(eval_seed, Domain::Treatment, i),
        );
        counts[a.iter().filter(|&&x| x).count()] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / m2 as f64).collect())
}

fn quantized(alpha: f64) -> u64 {
    (alpha * 1e6) as u64
}

/// Mean potential outcomes per stratum under canonical vectors (`s` ones
/// followed by zeros): overall, among the untreated, and among the treated,
/// with the zero convention at the empty arms.
#[derive(Debug, Clone)]
pub struct PotentialOutcomeMeans {
    pub n: usize,
    pub overall: Vec<f64>,
    pub arm0: Vec<f64>,
    pub arm1: Vec<f64>,
}

/// Simulates potential outcomes for each canonical vector on `m3` clusters
/// of size `n`, reusing one covariate draw across strata.
pub fn truth_potential_outcomes(cfg: &DgpConfig, n: usize, m3: u64) -> Result<PotentialOutcomeMeans> {
    if n == 0 {
        return Err(Error::config("cluster size must be positive"));
    }
    let eval_seed = derive_seed(cfg.seed, 0x706f5f_u64 ^ (n as u64));
    let mut overall = vec![0.0; n + 1];
    let mut arm0 = vec![0.0; n + 1];
    let mut arm1 = vec![0.0; n + 1];
    for i in 0..m3 {
        let covariates = draw_covariates(cfg, n, &mut stream(eval_seed, Domain::Covariates, i));
        let mut outcome_rng = stream(eval_seed, Domain::Outcome, i);
        for s in 0..=n {
            let mut sum = 0.0;
            let mut sum0 = 0.0;
            let mut sum1 = 0.0;
            for (j, row) in covariates.iter().enumerate() {
                let own = j < s;
                let g = spillover_fraction(s, own, n);
                let p = outcome_probability(cfg, row, own, g);
                let y = f64::from(u8::from(outcome_rng.gen::<f64>() < p));
                sum += y;
                if own {
                    sum1 += y;
                } else {
                    sum0 += y;
                }
            }
            overall[s] += sum / n as f64;
            if s < n {
                arm0[s] += sum0 / (n - s) as f64;
            }
            if s > 0 {
                arm1[s] += sum1 / s as f64;
            }
        }
    }
    let m = m3 as f64;
    for v in overall.iter_mut().chain(&mut arm0).chain(&mut arm1) {
        *v /= m;
    }
    Ok(PotentialOutcomeMeans {
        n,
        overall,
        arm0,
        arm1,
    })
}

/// Assembled true values of every target estimand, with the nuisance pieces
/// they were built from.
#[derive(Debug, Clone)]
pub struct TruthTable {
    pub alphas: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub sizes: Vec<usize>,
    pub size_probs: Vec<f64>,
    /// `omega[alpha_idx][n]` is the length-`n+1` stratum distribution.
    pub omega: Vec<BTreeMap<usize, Vec<f64>>>,
    pub potential: BTreeMap<usize, PotentialOutcomeMeans>,
    pub mu: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// Monte-Carlo sample sizes `(m1, m2, m3)` used; zero when the
    /// quadrature route produced the table.
    pub mc_sizes: (u64, u64, u64),
}

impl TruthTable {
    fn alpha_index(&self, alpha: f64) -> Result<usize> {
        self.alphas
            .iter()
            .position(|&a| (a - alpha).abs() < 1e-12)
            .ok_or_else(|| Error::domain(format!("alpha {alpha} not in the truth table")))
    }

    /// True value of the given estimand.
    pub fn value(&self, spec: &EstimandSpec) -> Result<f64> {
        let i = self.alpha_index(spec.alpha)?;
        let single = |kind: EstimandKind, idx: usize| -> Result<f64> {
            Ok(match kind {
                EstimandKind::Mu | EstimandKind::OverallEffect => self.mu[idx],
                EstimandKind::Mu0 | EstimandKind::Spillover0 => self.mu0[idx],
                EstimandKind::Mu1 | EstimandKind::Spillover1 => self.mu1[idx],
                EstimandKind::MuTypeB | EstimandKind::OverallEffectTypeB => {
                    self.type_b_mean(self.alphas[idx])
                }
            })
        };
        if spec.kind.is_contrast() {
            let ap = spec
                .alpha_prime
                .ok_or_else(|| Error::config("contrast requires alpha_prime"))?;
            let j = self.alpha_index(ap)?;
            Ok(single(spec.kind, i)? - single(spec.kind, j)?)
        } else {
            single(spec.kind, i)
        }
    }

    /// Comparator mean under independent assignment, assembled from the
    /// same potential-outcome means and binomial stratum masses.
    pub fn type_b_mean(&self, alpha: f64) -> f64 {
        let mut acc = 0.0;
        for (&n, &pn) in self.sizes.iter().zip(&self.size_probs) {
            let weights = type_b_weights(alpha, n);
            let pot = &self.potential[&n];
            let inner: f64 = weights
                .iter()
                .zip(&pot.overall)
                .map(|(w, y)| w * y)
                .sum();
            acc += pn * inner;
        }
        acc
    }
}

fn assemble(
    alphas: &[f64],
    gamma0: Vec<f64>,
    sizes: &[usize],
    size_probs: &[f64],
    omega: Vec<BTreeMap<usize, Vec<f64>>>,
    potential: BTreeMap<usize, PotentialOutcomeMeans>,
    mc_sizes: (u64, u64, u64),
) -> TruthTable {
    let mut mu = Vec::with_capacity(alphas.len());
    let mut mu0 = Vec::with_capacity(alphas.len());
    let mut mu1 = Vec::with_capacity(alphas.len());
    for omega_a in &omega {
        let mut acc = 0.0;
        let mut acc0 = 0.0;
        let mut acc1 = 0.0;
        for (&n, &pn) in sizes.iter().zip(size_probs) {
            let w = &omega_a[&n];
            let pot = &potential[&n];
            for s in 0..=n {
                acc += pn * w[s] * pot.overall[s];
                acc0 += pn * w[s] * pot.arm0[s];
                acc1 += pn * w[s] * pot.arm1[s];
            }
        }
        mu.push(acc);
        mu0.push(acc0);
        mu1.push(acc1);
    }
    TruthTable {
        alphas: alphas.to_vec(),
        gamma0,
        sizes: sizes.to_vec(),
        size_probs: size_probs.to_vec(),
        omega,
        potential,
        mu,
        mu0,
        mu1,
        mc_sizes,
    }
}

/// Full empirical truth determination: grid intercepts (`m1` clusters per
/// grid point), stratum frequencies (`m2` clusters per size and policy),
/// and potential-outcome means (`m3` clusters per size).
pub fn assemble_truth(
    cfg: &DgpConfig,
    alphas: &[f64],
    m1: u64,
    m2: u64,
    m3: u64,
) -> Result<TruthTable> {
    assemble_truth_with_grid(cfg, alphas, m1, m2, m3, 0.005)
}

/// As [`assemble_truth`] with an explicit γ-grid spacing.
pub fn assemble_truth_with_grid(
    cfg: &DgpConfig,
    alphas: &[f64],
    m1: u64,
    m2: u64,
    m3: u64,
    grid_step: f64,
) -> Result<TruthTable> {
    let mut gamma0 = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        gamma0.push(truth_gamma0(cfg, alpha, m1, grid_step)?);
    }
    let mut omega = Vec::with_capacity(alphas.len());
    for (&alpha, &g) in alphas.iter().zip(&gamma0) {
        let mut per_size = BTreeMap::new();
        for &n in &cfg.sizes.support {
            per_size.insert(n, truth_omega(cfg, alpha, g, n, m2)?);
        }
        omega.push(per_size);
    }
    let mut potential = BTreeMap::new();
    for &n in &cfg.sizes.support {
        potential.insert(n, truth_potential_outcomes(cfg, n, m3)?);
    }
    Ok(assemble(
        alphas,
        gamma0,
        &cfg.sizes.support,
        &cfg.sizes.probs,
        omega,
        potential,
        (m1, m2, m3),
    ))
}

/// Quadrature route to the same truth table: `γ₀α` by root solving on a
/// fresh covariate sample, `ω` by exhaustive enumeration of counterfactual
/// propensities, and potential-outcome means by averaging outcome
/// probabilities (no Bernoulli noise). Sizes must be within the exhaustive
/// cap. Serves as the independent cross-check of the simulation route.
pub fn truth_by_quadrature(
    cfg: &DgpConfig,
    alphas: &[f64],
    rule: &QuadratureRule,
    covariate_clusters: usize,
    seed: u64,
) -> Result<TruthTable> {
    // Fresh covariate-only sample, sizes drawn from the configured mix.
    let sample_cfg = DgpConfig {
        seed: derive_seed(seed, 0x747175),
        clusters: covariate_clusters,
        ..cfg.clone()
    };
    let sample = generate_dataset(&sample_cfg)?;
    let mut gamma0 = Vec::with_capacity(alphas.len());
    let mut omega: Vec<BTreeMap<usize, Vec<f64>>> = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let sol = solve_gamma0(&cfg.treatment, alpha, &sample, rule, 1e-10)?;
        let mut per_size = BTreeMap::new();
        for &n in &cfg.sizes.support {
            // ω for size n averages counterfactual stratum sums over the
            // size-n clusters of the sample.
            let of_size: Vec<ClusterData> = sample
                .iter()
                .filter(|c| c.size() == n)
                .cloned()
                .collect();
            if of_size.is_empty() {
                return Err(Error::config(format!(
                    "covariate sample has no clusters of size {n}"
                )));
            }
            let w = estimate_omega_exhaustive(&cfg.treatment, &sol, &of_size, rule, usize::MAX)?;
            per_size.insert(
                n,
                w.distribution(n).expect("all strata estimated"),
            );
        }
        gamma0.push(sol.gamma0);
        omega.push(per_size);
    }
    let mut potential = BTreeMap::new();
    let draws = 20_000u64.max(covariate_clusters as u64);
    for &n in &cfg.sizes.support {
        let eval_seed = derive_seed(seed, 0x706f71_u64 ^ (n as u64));
        let mut overall = vec![0.0; n + 1];
        let mut arm0 = vec![0.0; n + 1];
        let mut arm1 = vec![0.0; n + 1];
        for i in 0..draws {
            let covariates =
                draw_covariates(cfg, n, &mut stream(eval_seed, Domain::Covariates, i));
            for s in 0..=n {
                let mut sum = 0.0;
                let mut sum0 = 0.0;
                let mut sum1 = 0.0;
                for (j, row) in covariates.iter().enumerate() {
                    let own = j < s;
                    let g = spillover_fraction(s, own, n);
                    let p = outcome_probability(cfg, row, own, g);
                    sum += p;
                    if own {
                        sum1 += p;
                    } else {
                        sum0 += p;
                    }
                }
                overall[s] += sum / n as f64;
                if s < n {
                    arm0[s] += sum0 / (n - s) as f64;
                }
                if s > 0 {
                    arm1[s] += sum1 / s as f64;
                }
            }
        }
        for v in overall.iter_mut().chain(&mut arm0).chain(&mut arm1) {
            *v /= draws as f64;
        }
        potential.insert(
            n,
            PotentialOutcomeMeans {
                n,
                overall,
                arm0,
                arm1,
            },
        );
    }
    Ok(assemble(
        alphas,
        gamma0,
        &cfg.sizes.support,
        &cfg.sizes.probs,
        omega,
        potential,
        (0, 0, 0),
    ))
}
