//! Oracle checks: every quadrature integral is compared against an
//! independent integration route (composite Simpson or plain Monte Carlo),
//! and the fitted pipeline against simulation ground truth.

use cipw_core::estimators::{cluster_avg_outcome, ipw_point_estimate, EstimandSpec};
use cipw_core::mestimation::{sandwich, Component, StackContext, StackLayout};
use cipw_core::policy::{
    estimate_omega_exhaustive, estimate_omega_subsampled, marginal_alpha, solve_gamma0,
    PolicySolution, StrataSelection, DEFAULT_SIZE_CAP,
};
use cipw_core::propensity::{
    cluster_log_likelihood, cluster_propensity, fit_mle, initial_params, total_log_likelihood,
    FitOptions, PropensityParams,
};
use cipw_core::simulation::{generate_dataset, truth_gamma0, truth_omega, DgpConfig};
use cipw_core::{ClusterData, QuadratureRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn rule() -> QuadratureRule {
    QuadratureRule::gauss_hermite(QuadratureRule::DEFAULT_NODES).unwrap()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bernoulli product for one treatment vector at a fixed intercept value.
fn product_at(intercept: f64, slopes: &[f64], rows: &[Vec<f64>], a: &[bool], b: f64) -> f64 {
    rows.iter()
        .zip(a)
        .map(|(row, &ai)| {
            let eta: f64 = intercept + b + slopes.iter().zip(row).map(|(s, l)| s * l).sum::<f64>();
            let p = expit(eta);
            if ai {
                p
            } else {
                1.0 - p
            }
        })
        .product()
}

/// Composite-Simpson integral of `f` against the Normal(0, σ²) density,
/// independent of the Gauss–Hermite machinery under test.
fn simpson_normal<F: Fn(f64) -> f64>(f: F, sigma: f64, panels: usize) -> f64 {
    assert!(panels % 2 == 0);
    if sigma == 0.0 {
        return f(0.0);
    }
    let half_width = 10.0 * sigma;
    let h = 2.0 * half_width / panels as f64;
    let density = |b: f64| {
        (-(b * b) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * core::f64::consts::PI).sqrt())
    };
    let g = |b: f64| f(b) * density(b);
    let mut acc = g(-half_width) + g(half_width);
    for i in 1..panels {
        let b = -half_width + i as f64 * h;
        acc += g(b) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn make_cluster(id: &str, rows: Vec<Vec<f64>>, a: Vec<bool>, y: Vec<f64>) -> ClusterData {
    ClusterData::new(id.into(), rows, a, y).unwrap()
}

#[test]
fn propensity_matches_simpson_on_varied_instances() {
    let r = rule();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..12 {
        let n = rng.gen_range(1..=5);
        let p = rng.gen_range(1..=2);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let a: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let params = PropensityParams::new(
            rng.gen_range(-1.0..1.0),
            (0..p).map(|_| rng.gen_range(-0.8..0.8)).collect(),
            rng.gen_range(0.1..1.2),
        )
        .unwrap();
        let cluster = make_cluster("s", rows.clone(), a.clone(), vec![0.0; n]);
        let got = cluster_propensity(&params, &cluster, &a, &r).unwrap();
        let want = simpson_normal(
            |b| product_at(params.beta0, &params.beta1, &rows, &a, b),
            params.sigma,
            4000,
        );
        assert!(
            (got - want).abs() < 2e-9,
            "trial {trial}: {got} vs {want}"
        );
    }
}

#[test]
fn propensity_matches_monte_carlo_benchmark_instance() {
    // σ=0.75, β₀=0.75, β₁=(−0.015, −0.025), n=3, identical rows (40, 6),
    // a=(1,1,0), from the benchmark generating process.
    let params = PropensityParams::new(0.75, vec![-0.015, -0.025], 0.75).unwrap();
    let rows = vec![vec![40.0, 6.0]; 3];
    let a = vec![true, true, false];
    let cluster = make_cluster("mc", rows.clone(), a.clone(), vec![0.0; 3]);
    let got = cluster_propensity(&params, &cluster, &a, &rule()).unwrap();

    let draws = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.0, params.sigma).unwrap();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..draws {
        let b = normal.sample(&mut rng);
        let v = product_at(params.beta0, &params.beta1, &rows, &a, b);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / draws as f64;
    let var = (sumsq / draws as f64 - mean * mean).max(0.0);
    let se = (var / draws as f64).sqrt();
    assert!(
        (got - mean).abs() < 3.0 * se,
        "quadrature {got}, MC {mean} ± {se}"
    );
}

#[test]
fn log_likelihood_matches_monte_carlo_on_simulated_cluster() {
    let cfg = DgpConfig::benchmark().with_clusters(3).with_seed(314);
    let data = generate_dataset(&cfg).unwrap();
    let cluster = &data[0];
    let params = cfg.treatment.clone();
    let got = cluster_log_likelihood(&params, cluster, &rule()).unwrap();

    let draws = 2_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, params.sigma).unwrap();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..draws {
        let b = normal.sample(&mut rng);
        let v = product_at(
            params.beta0,
            &params.beta1,
            &cluster.covariates,
            &cluster.treatment,
            b,
        );
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / draws as f64;
    let var = (sumsq / draws as f64 - mean * mean).max(0.0);
    let se = (var / draws as f64).sqrt();
    // Delta method on the log.
    let log_se = se / mean;
    assert!(
        (got - mean.ln()).abs() < 3.0 * log_se,
        "quadrature {got}, MC {} ± {log_se}",
        mean.ln()
    );
}

#[test]
fn counterfactual_propensity_matches_monte_carlo() {
    let params = PropensityParams::new(-0.4, vec![0.3], 0.6).unwrap();
    let sol = PolicySolution {
        alpha: 0.45,
        gamma0: 0.2,
        solver_residual: 0.0,
    };
    let rows = vec![vec![0.8], vec![-1.1], vec![0.3], vec![1.9]];
    let a = vec![false, true, true, false];
    let cluster = make_cluster("cf", rows.clone(), a.clone(), vec![0.0; 4]);
    let got = cipw_core::policy::counterfactual_cluster_propensity(
        &params,
        &sol,
        &cluster,
        &a,
        &rule(),
    )
    .unwrap();
    let draws = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let normal = Normal::new(0.0, params.sigma).unwrap();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..draws {
        let b = normal.sample(&mut rng);
        let v = product_at(sol.gamma0, &params.beta1, &rows, &a, b);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / draws as f64;
    let se = ((sumsq / draws as f64 - mean * mean).max(0.0) / draws as f64).sqrt();
    assert!((got - mean).abs() < 3.0 * se, "{got} vs MC {mean} ± {se}");
}

#[test]
fn marginal_alpha_matches_simulated_treatment_fraction() {
    // Fit the model on a benchmark draw, then simulate treatments under the
    // fitted model at γ₀ = β̂₀ and compare the treated fraction with the
    // quadrature-smoothed value.
    let cfg = DgpConfig::benchmark().with_clusters(80).with_seed(2718);
    let data = generate_dataset(&cfg).unwrap();
    let r = rule();
    let init = initial_params(&data).unwrap();
    let fit = fit_mle(&data, &r, &init, &FitOptions::default()).unwrap();
    let params = fit.params;
    let got = marginal_alpha(&params, params.beta0, &data, &r).unwrap();

    let reps = 4000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, params.sigma).unwrap();
    let mut cluster_means = Vec::with_capacity(reps * data.len());
    for _ in 0..reps {
        for cluster in &data {
            let b = normal.sample(&mut rng);
            let mut acc = 0.0;
            for row in &cluster.covariates {
                let eta = params.beta0
                    + b
                    + params
                        .beta1
                        .iter()
                        .zip(row)
                        .map(|(s, l)| s * l)
                        .sum::<f64>();
                if rng.gen::<f64>() < expit(eta) {
                    acc += 1.0;
                }
            }
            cluster_means.push(acc / cluster.size() as f64);
        }
    }
    let m = cluster_means.len() as f64;
    let mean = cluster_means.iter().sum::<f64>() / m;
    let var = cluster_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let se = (var / m).sqrt();
    assert!((got - mean).abs() < 3.0 * se, "{got} vs MC {mean} ± {se}");
}

/// Sandwich covariance of the ν block alone: a stack holding only the score
/// components.
fn nu_standard_errors(data: &[ClusterData], params: &PropensityParams, r: &QuadratureRule) -> Vec<f64> {
    let p = params.dim();
    let mut comps = vec![Component::Beta0];
    for j in 0..p {
        comps.push(Component::Beta1(j));
    }
    comps.push(Component::Sigma);
    let layout = StackLayout::from_components(comps).unwrap();
    let ctx = StackContext::new(
        data,
        r,
        params.clone(),
        vec![],
        vec![],
        EstimandSpec::mean(0.5),
        DEFAULT_SIZE_CAP,
    )
    .unwrap();
    let theta = ctx.plugin_theta(&layout).unwrap();
    let res = sandwich(&theta, &ctx).unwrap();
    let m = data.len() as f64;
    (0..theta.len())
        .map(|i| (res.sigma_hat[(i, i)] / m).sqrt())
        .collect()
}

#[test]
fn mle_recovers_benchmark_parameters() {
    let cfg = DgpConfig::benchmark().with_seed(1002);
    let data = generate_dataset(&cfg).unwrap();
    assert_eq!(data.len(), 125);
    let r = rule();
    let init = initial_params(&data).unwrap();
    let fit = fit_mle(&data, &r, &init, &FitOptions::default()).unwrap();
    let se = nu_standard_errors(&data, &fit.params, &r);
    let truth = [0.75, -0.015, -0.025, 0.75];
    let est = fit.params.to_vec();
    for i in 0..4 {
        assert!(
            (est[i] - truth[i]).abs() < 3.0 * se[i],
            "component {i}: {} vs {} (se {})",
            est[i],
            truth[i],
            se[i]
        );
    }
}

#[test]
fn mle_collapses_to_plain_logistic_without_random_effect() {
    // σ=0, one covariate.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (b0, b1) = (0.3, -0.6);
    let mut clusters = Vec::new();
    for i in 0..120 {
        let n = rng.gen_range(2..=5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let a: Vec<bool> = rows
            .iter()
            .map(|row| rng.gen::<f64>() < expit(b0 + b1 * row[0]))
            .collect();
        clusters.push(make_cluster(&format!("c{i:03}"), rows, a, vec![0.0; n]));
    }
    let r = rule();
    let logistic = initial_params(&clusters).unwrap();
    let fit = fit_mle(&clusters, &r, &logistic, &FitOptions::default()).unwrap();
    let se = nu_standard_errors(&clusters, &fit.params, &r);
    assert!(
        (fit.params.beta0 - logistic.beta0).abs() < 2.0 * se[0],
        "{} vs {}",
        fit.params.beta0,
        logistic.beta0
    );
    assert!(
        (fit.params.beta1[0] - logistic.beta1[0]).abs() < 2.0 * se[1],
        "{} vs {}",
        fit.params.beta1[0],
        logistic.beta1[0]
    );
}

#[test]
fn quadrature_refinement_leaves_fit_stable() {
    let cfg = DgpConfig::fast_benchmark().with_clusters(60).with_seed(606);
    let data = generate_dataset(&cfg).unwrap();
    let init = initial_params(&data).unwrap();
    let opts = FitOptions::default();
    let fit_a = fit_mle(
        &data,
        &QuadratureRule::gauss_hermite(25).unwrap(),
        &init,
        &opts,
    )
    .unwrap();
    let fit_b = fit_mle(
        &data,
        &QuadratureRule::gauss_hermite(50).unwrap(),
        &init,
        &opts,
    )
    .unwrap();
    let a = fit_a.params.to_vec();
    let b = fit_b.params.to_vec();
    for i in 0..a.len() {
        assert!((a[i] - b[i]).abs() < 1e-4, "component {i}: {} vs {}", a[i], b[i]);
    }
}

#[test]
fn monotone_likelihood_trace() {
    let cfg = DgpConfig::fast_benchmark().with_clusters(50).with_seed(8);
    let data = generate_dataset(&cfg).unwrap();
    let r = rule();
    let init = initial_params(&data).unwrap();
    let fit = fit_mle(&data, &r, &init, &FitOptions::default()).unwrap();
    assert!(fit.trace.len() >= 2);
    for w in fit.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "{} then {}", w[0], w[1]);
    }
    let direct = total_log_likelihood(&fit.params, &data, &r).unwrap();
    assert!((fit.log_likelihood - direct).abs() < 1e-9);
}

#[test]
fn subsampled_omega_is_unbiased_over_seeds() {
    let cfg = DgpConfig::fast_benchmark()
        .with_clusters(12)
        .with_sizes(vec![4, 6], vec![0.5, 0.5])
        .with_seed(99);
    let data = generate_dataset(&cfg).unwrap();
    let r = rule();
    let params = cfg.treatment.clone();
    let sol = solve_gamma0(&params, 0.45, &data, &r, 1e-10).unwrap();
    let exhaustive = estimate_omega_exhaustive(&params, &sol, &data, &r, DEFAULT_SIZE_CAP).unwrap();
    let seeds = 500u64;
    let mut samples: std::collections::BTreeMap<(usize, usize), Vec<f64>> =
        std::collections::BTreeMap::new();
    for seed in 0..seeds {
        let w = estimate_omega_subsampled(&params, &sol, &data, &r, 1, seed, StrataSelection::All)
            .unwrap();
        for n in w.sizes().collect::<Vec<_>>() {
            for s in 0..=n {
                samples
                    .entry((n, s))
                    .or_default()
                    .push(w.omega(n, s).unwrap());
            }
        }
    }
    for ((n, s), vals) in samples {
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let se = (var / m).sqrt();
        let want = exhaustive.omega(n, s).unwrap();
        assert!(
            (mean - want).abs() <= 3.0 * se + 1e-12,
            "(n,s)=({n},{s}): seed-mean {mean} vs exhaustive {want} (se {se})"
        );
    }
}

#[test]
fn omega_cross_method_triangle() {
    // Simulation-tabulated stratum frequencies against quadrature plus
    // enumeration on a fresh covariate sample, both at the true parameters.
    let cfg = DgpConfig::benchmark().with_seed(424242);
    let alpha = 0.40;
    let m = 150_000u64;
    let gamma = truth_gamma0(&cfg, alpha, m, 0.005).unwrap();
    let mc = truth_omega(&cfg, alpha, gamma, 8, m).unwrap();

    let sample_cfg = cfg
        .clone()
        .with_clusters(3000)
        .with_sizes(vec![8], vec![1.0])
        .with_seed(31);
    let sample = generate_dataset(&sample_cfg).unwrap();
    let r = rule();
    // γ re-solved on a mixed-size sample mirroring the size distribution.
    let mixed = generate_dataset(&cfg.clone().with_clusters(3000).with_seed(32)).unwrap();
    let sol = solve_gamma0(&cfg.treatment, alpha, &mixed, &r, 1e-10).unwrap();
    assert!(
        (sol.gamma0 - gamma).abs() < 0.02,
        "grid {gamma} vs root {}",
        sol.gamma0
    );
    let quad = estimate_omega_exhaustive(&cfg.treatment, &sol, &sample, &r, DEFAULT_SIZE_CAP)
        .unwrap()
        .distribution(8)
        .unwrap();
    for s in 0..=8 {
        let se = (mc[s] * (1.0 - mc[s]) / m as f64).sqrt();
        // 3 MC standard errors plus headroom for the finite covariate sample.
        assert!(
            (mc[s] - quad[s]).abs() < 3.0 * se + 0.004,
            "s={s}: MC {} vs quadrature {}",
            mc[s],
            quad[s]
        );
    }
    assert!((mc[0] - 0.059).abs() < 0.006, "omega(0,8,0.40) = {}", mc[0]);
}

#[test]
fn psi_mean_component_is_unbiased_at_truth() {
    // Average of the target estimating term over freshly simulated clusters,
    // evaluated at true parameters and truth-table nuisances, is zero within
    // Monte-Carlo error.
    let cfg = DgpConfig::benchmark()
        .with_sizes(vec![3, 4], vec![0.5, 0.5])
        .with_seed(111);
    let alpha = 0.5;
    let r = rule();
    let truth = cipw_core::simulation::truth_by_quadrature(&cfg, &[alpha], &r, 40_000, 7).unwrap();
    let mu_true = truth.mu[0];
    let gamma = truth.gamma0[0];

    let fresh_cfg = cfg.clone().with_clusters(40_000).with_seed(888);
    let fresh = generate_dataset(&fresh_cfg).unwrap();
    let sol = PolicySolution {
        alpha,
        gamma0: gamma,
        solver_residual: 0.0,
    };
    // ω at the true parameters over an independent covariate sample.
    let omega_sample = generate_dataset(&cfg.clone().with_clusters(40_000).with_seed(999)).unwrap();
    let omega =
        estimate_omega_exhaustive(&cfg.treatment, &sol, &omega_sample, &r, DEFAULT_SIZE_CAP)
            .unwrap();
    let mut terms = Vec::with_capacity(fresh.len());
    for cluster in &fresh {
        let p = cluster_propensity(&cfg.treatment, cluster, &cluster.treatment, &r).unwrap();
        let w = omega
            .omega_vector(cluster.size(), cluster.treated_count())
            .unwrap();
        terms.push(cluster_avg_outcome(cluster) * w / p - mu_true);
    }
    let m = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / m;
    let var = terms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let se = (var / m).sqrt();
    assert!(
        mean.abs() < 3.0 * se + 0.003,
        "mean ψ_μ = {mean} (se {se})"
    );
}

#[test]
fn bootstrap_se_tracks_sandwich_se() {
    let cfg = DgpConfig::benchmark()
        .with_clusters(80)
        .with_sizes(vec![2, 3, 4], vec![0.3, 0.4, 0.3])
        .with_seed(20_20);
    let data = generate_dataset(&cfg).unwrap();
    let r = rule();
    let alpha = 0.45;
    let init = initial_params(&data).unwrap();
    let fit = fit_mle(&data, &r, &init, &FitOptions::default()).unwrap();
    let report = cipw_core::estimators::estimate_with_ci(
        &EstimandSpec::mean(alpha),
        &data,
        &fit.params,
        &r,
        None,
        0,
        0.95,
    )
    .unwrap();

    let resamples = 500usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut points = Vec::with_capacity(resamples);
    let opts = FitOptions {
        tol: 1e-5,
        max_iter: 300,
    };
    for b in 0..resamples {
        let resample: Vec<ClusterData> = (0..data.len())
            .map(|j| {
                let mut c = data[rng.gen_range(0..data.len())].clone();
                c.id = format!("b{b}_{j}").as_str().into();
                c
            })
            .collect();
        let Ok(init_b) = initial_params(&resample) else {
            continue;
        };
        let Ok(fit_b) = fit_mle(&resample, &r, &init_b, &opts) else {
            continue;
        };
        let Ok(sol_b) = solve_gamma0(&fit_b.params, alpha, &resample, &r, 1e-10) else {
            continue;
        };
        let Ok(w_b) =
            estimate_omega_exhaustive(&fit_b.params, &sol_b, &resample, &r, DEFAULT_SIZE_CAP)
        else {
            continue;
        };
        let Ok(point) = ipw_point_estimate(
            &EstimandSpec::mean(alpha),
            &resample,
            &fit_b.params,
            &r,
            Some(&w_b),
            None,
        ) else {
            continue;
        };
        points.push(point);
    }
    assert!(points.len() > 450, "only {} bootstrap fits", points.len());
    let m = points.len() as f64;
    let mean = points.iter().sum::<f64>() / m;
    let var = points.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    let boot_se = var.sqrt();
    let ratio = boot_se / report.std_error;
    assert!(
        (0.8..=1.2).contains(&ratio),
        "bootstrap {boot_se} vs sandwich {} (ratio {ratio})",
        report.std_error
    );
}
