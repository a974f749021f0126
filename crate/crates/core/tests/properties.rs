//! Property suites: invariants that must hold across randomized inputs.

use cipw_core::estimators::{estimate_with_ci, ipw_point_estimate, EstimandKind, EstimandSpec};
use cipw_core::mestimation::{psi, stack_residual, StackContext};
use cipw_core::policy::{
    estimate_omega_exhaustive, marginal_alpha, solve_gamma0, type_b_weights, PolicySolution,
    DEFAULT_SIZE_CAP,
};
use cipw_core::propensity::{cluster_propensity, fit_mle, initial_params, FitOptions, PropensityParams};
use cipw_core::simulation::{generate_dataset, DgpConfig};
use cipw_core::{ClusterData, QuadratureRule};
use proptest::prelude::*;

fn rule() -> QuadratureRule {
    QuadratureRule::gauss_hermite(QuadratureRule::DEFAULT_NODES).unwrap()
}

fn cluster_from(rows: Vec<Vec<f64>>, a: Vec<bool>, y: Vec<f64>, id: &str) -> ClusterData {
    ClusterData::new(id.into(), rows, a, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutation_equivariance(
        n in 2usize..6,
        beta0 in -1.0f64..1.0,
        slope in -0.8f64..0.8,
        sigma in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|j| vec![j as f64 * 0.7 - 1.0]).collect();
        let a: Vec<bool> = (0..n).map(|j| j % 2 == 0).collect();
        let params = PropensityParams::new(beta0, vec![slope], sigma).unwrap();
        let c = cluster_from(rows.clone(), a.clone(), vec![0.0; n], "base");
        let r = rule();
        let base = cluster_propensity(&params, &c, &a, &r).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let rows_p: Vec<Vec<f64>> = order.iter().map(|&j| rows[j].clone()).collect();
        let a_p: Vec<bool> = order.iter().map(|&j| a[j]).collect();
        let cp = cluster_from(rows_p, a_p.clone(), vec![0.0; n], "perm");
        let permuted = cluster_propensity(&params, &cp, &a_p, &r).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12, "{base} vs {permuted}");
    }

    #[test]
    fn gamma_round_trip(
        gamma in -3.0f64..3.0,
        beta0 in -0.5f64..0.5,
        slope in -0.5f64..0.5,
        sigma in 0.0f64..1.0,
    ) {
        let params = PropensityParams::new(beta0, vec![slope], sigma).unwrap();
        let clusters = vec![
            cluster_from(vec![vec![0.4], vec![-1.2], vec![0.8]], vec![true, false, true], vec![0.0; 3], "a"),
            cluster_from(vec![vec![1.5], vec![0.1]], vec![false, true], vec![0.0; 2], "b"),
        ];
        let r = rule();
        let alpha = marginal_alpha(&params, gamma, &clusters, &r).unwrap();
        prop_assume!(alpha > 1e-9 && alpha < 1.0 - 1e-9);
        let sol = solve_gamma0(&params, alpha, &clusters, &r, 1e-12).unwrap();
        prop_assert!((sol.gamma0 - gamma).abs() < 1e-8, "{} vs {gamma}", sol.gamma0);
    }

    #[test]
    fn omega_rows_close_under_random_params(
        beta0 in -0.7f64..0.7,
        slope in -0.6f64..0.6,
        sigma in 0.0f64..1.0,
        gamma in -1.0f64..1.0,
    ) {
        let params = PropensityParams::new(beta0, vec![slope], sigma).unwrap();
        let clusters = vec![
            cluster_from(vec![vec![0.3], vec![-0.5], vec![1.1], vec![0.0]], vec![true, true, false, false], vec![0.0; 4], "a"),
            cluster_from(vec![vec![0.9], vec![0.2], vec![-1.4], vec![0.5], vec![2.0], vec![-0.7]],
                vec![false, true, false, true, false, true], vec![0.0; 6], "b"),
        ];
        let sol = PolicySolution { alpha: 0.5, gamma0: gamma, solver_residual: 0.0 };
        let w = estimate_omega_exhaustive(&params, &sol, &clusters, &rule(), DEFAULT_SIZE_CAP).unwrap();
        for n in w.sizes().collect::<Vec<_>>() {
            let row = w.distribution(n).unwrap();
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-8, "n={n}: {total}");
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn contrast_antisymmetry(
        a1 in 0.2f64..0.8,
        a2 in 0.2f64..0.8,
        outcome_scale in 0.5f64..2.0,
    ) {
        let cfg = DgpConfig::fast_benchmark()
            .with_clusters(12)
            .with_sizes(vec![2, 3], vec![0.5, 0.5])
            .with_seed(5);
        let mut clusters = generate_dataset(&cfg).unwrap();
        for c in &mut clusters {
            for y in &mut c.outcome {
                *y *= outcome_scale;
            }
        }
        let params = cfg.treatment.clone();
        let r = rule();
        let sol1 = solve_gamma0(&params, a1, &clusters, &r, 1e-10).unwrap();
        let sol2 = solve_gamma0(&params, a2, &clusters, &r, 1e-10).unwrap();
        let w1 = estimate_omega_exhaustive(&params, &sol1, &clusters, &r, DEFAULT_SIZE_CAP).unwrap();
        let w2 = estimate_omega_exhaustive(&params, &sol2, &clusters, &r, DEFAULT_SIZE_CAP).unwrap();
        for kind in [EstimandKind::OverallEffect, EstimandKind::Spillover0, EstimandKind::Spillover1] {
            let fwd = EstimandSpec::new(kind, a1, Some(a2)).unwrap();
            let rev = EstimandSpec::new(kind, a2, Some(a1)).unwrap();
            let f = ipw_point_estimate(&fwd, &clusters, &params, &r, Some(&w1), Some(&w2)).unwrap();
            let b = ipw_point_estimate(&rev, &clusters, &params, &r, Some(&w2), Some(&w1)).unwrap();
            prop_assert_eq!(f, -b);
        }
    }
}

#[test]
fn marginal_alpha_increases_on_grid() {
    let cfg = DgpConfig::fast_benchmark().with_clusters(15).with_seed(44);
    let clusters = generate_dataset(&cfg).unwrap();
    let params = cfg.treatment.clone();
    let r = rule();
    let mut last = 0.0;
    for i in 0..40 {
        let gamma = -6.0 + 0.3 * i as f64;
        let a = marginal_alpha(&params, gamma, &clusters, &r).unwrap();
        assert!(a > last, "not increasing at gamma {gamma}: {a} after {last}");
        last = a;
    }
    // Saturation far in the tail.
    let sat = marginal_alpha(&params, 40.0, &clusters, &r).unwrap();
    assert!(sat > 0.999, "saturation failed: {sat}");
}

#[test]
fn binomial_reduction_and_type_b_coincide_without_cluster_effects() {
    // σ=0, β₁=0 makes the proposed ω exactly Binomial(n, α) and the type-B
    // and proposed estimators coincide.
    let mut cfg = DgpConfig::fast_benchmark()
        .with_clusters(14)
        .with_sizes(vec![2, 4], vec![0.5, 0.5])
        .with_seed(21);
    cfg.treatment = PropensityParams::new(0.3, vec![0.0, 0.0], 0.0).unwrap();
    let clusters = generate_dataset(&cfg).unwrap();
    let params = cfg.treatment.clone();
    let r = rule();
    let alpha = 0.42;
    let sol = solve_gamma0(&params, alpha, &clusters, &r, 1e-12).unwrap();
    let w = estimate_omega_exhaustive(&params, &sol, &clusters, &r, DEFAULT_SIZE_CAP).unwrap();
    for n in w.sizes().collect::<Vec<_>>() {
        let got = w.distribution(n).unwrap();
        let want = type_b_weights(alpha, n);
        for (g, t) in got.iter().zip(&want) {
            assert!((g - t).abs() < 1e-10, "n={n}: {g} vs {t}");
        }
    }
    let mu = ipw_point_estimate(
        &EstimandSpec::mean(alpha),
        &clusters,
        &params,
        &r,
        Some(&w),
        None,
    )
    .unwrap();
    let mu_tb = ipw_point_estimate(
        &EstimandSpec::new(EstimandKind::MuTypeB, alpha, None).unwrap(),
        &clusters,
        &params,
        &r,
        None,
        None,
    )
    .unwrap();
    assert!((mu - mu_tb).abs() < 1e-8, "{mu} vs {mu_tb}");
}

#[test]
fn weights_cancel_at_the_observational_policy() {
    // σ=0, β₁=0, α = expit(β₀): ω̂(A,N,α) equals the propensity and μ̂ is
    // the plain mean of cluster averages.
    let mut cfg = DgpConfig::fast_benchmark()
        .with_clusters(16)
        .with_sizes(vec![3, 5], vec![0.5, 0.5])
        .with_seed(77);
    cfg.treatment = PropensityParams::new(0.4, vec![0.0, 0.0], 0.0).unwrap();
    let clusters = generate_dataset(&cfg).unwrap();
    let params = cfg.treatment.clone();
    let r = rule();
    let alpha = 1.0 / (1.0 + (-0.4f64).exp());
    let sol = solve_gamma0(&params, alpha, &clusters, &r, 1e-12).unwrap();
    assert!((sol.gamma0 - 0.4).abs() < 1e-9);
    let w = estimate_omega_exhaustive(&params, &sol, &clusters, &r, DEFAULT_SIZE_CAP).unwrap();
    let mu = ipw_point_estimate(
        &EstimandSpec::mean(alpha),
        &clusters,
        &params,
        &r,
        Some(&w),
        None,
    )
    .unwrap();
    let plain: f64 = clusters
        .iter()
        .map(cipw_core::estimators::cluster_avg_outcome)
        .sum::<f64>()
        / clusters.len() as f64;
    assert!((mu - plain).abs() < 1e-10, "{mu} vs {plain}");
}

#[test]
fn quadrature_refinement_stability_of_point_estimate() {
    let cfg = DgpConfig::fast_benchmark().with_clusters(40).with_seed(3131);
    let clusters = generate_dataset(&cfg).unwrap();
    let alpha = 0.45;
    let mut points = Vec::new();
    for q in [QuadratureRule::DEFAULT_NODES, 2 * QuadratureRule::DEFAULT_NODES] {
        let r = QuadratureRule::gauss_hermite(q).unwrap();
        let init = initial_params(&clusters).unwrap();
        let fit = fit_mle(&clusters, &r, &init, &FitOptions::default()).unwrap();
        let sol = solve_gamma0(&fit.params, alpha, &clusters, &r, 1e-10).unwrap();
        let w =
            estimate_omega_exhaustive(&fit.params, &sol, &clusters, &r, DEFAULT_SIZE_CAP).unwrap();
        points.push(
            ipw_point_estimate(
                &EstimandSpec::mean(alpha),
                &clusters,
                &fit.params,
                &r,
                Some(&w),
                None,
            )
            .unwrap(),
        );
    }
    assert!(
        (points[0] - points[1]).abs() < 1e-4,
        "{} vs {}",
        points[0],
        points[1]
    );
}

#[test]
fn stack_root_property_with_subsampling() {
    let cfg = DgpConfig::fast_benchmark().with_clusters(35).with_seed(911);
    let clusters = generate_dataset(&cfg).unwrap();
    let r = rule();
    let init = initial_params(&clusters).unwrap();
    let fit = fit_mle(&clusters, &r, &init, &FitOptions::default()).unwrap();
    let alpha = 0.5;
    let sol = solve_gamma0(&fit.params, alpha, &clusters, &r, 1e-10).unwrap();
    let w = cipw_core::policy::estimate_omega_subsampled(
        &fit.params,
        &sol,
        &clusters,
        &r,
        2,
        987,
        cipw_core::policy::StrataSelection::Observed,
    )
    .unwrap();
    let ctx = StackContext::new(
        &clusters,
        &r,
        fit.params.clone(),
        vec![sol],
        vec![w],
        EstimandSpec::mean(alpha),
        DEFAULT_SIZE_CAP,
    )
    .unwrap();
    let layout = ctx.standard_layout().unwrap();
    let theta = ctx.plugin_theta(&layout).unwrap();
    let resid = stack_residual(&theta, &ctx).unwrap();
    for (i, v) in resid.iter().enumerate() {
        assert!(v.abs() < 1e-6, "component {i}: {v:e}");
    }
    // ψ for a cluster of one size is zero on other sizes' ω rows.
    let c0 = &clusters[0];
    let full = psi(c0, &theta, &ctx).unwrap();
    for (j, comp) in layout.components().iter().enumerate() {
        if let cipw_core::mestimation::Component::Omega { n, .. } = comp {
            if *n != c0.size() {
                assert_eq!(full[j], 0.0);
            }
        }
    }
}

#[test]
fn report_ci_uses_normal_quantile() {
    let cfg = DgpConfig::fast_benchmark()
        .with_clusters(25)
        .with_sizes(vec![2, 3], vec![0.5, 0.5])
        .with_seed(1212);
    let clusters = generate_dataset(&cfg).unwrap();
    let r = rule();
    let init = initial_params(&clusters).unwrap();
    let fit = fit_mle(&clusters, &r, &init, &FitOptions::default()).unwrap();
    let report = estimate_with_ci(
        &EstimandSpec::mean(0.5),
        &clusters,
        &fit.params,
        &r,
        None,
        0,
        0.95,
    )
    .unwrap();
    let z = 1.959_963_984_540_054;
    assert!((report.ci_upper - report.point - z * report.std_error).abs() < 1e-12);
    assert!((report.point - report.ci_lower - z * report.std_error).abs() < 1e-12);
    assert!(report.ci_lower <= report.point && report.point <= report.ci_upper);
    assert!((report.std_error * report.std_error - report.target_variance).abs() < 1e-15);
}

#[test]
fn oe_of_identical_policies_reports_zero_with_covering_ci() {
    let cfg = DgpConfig::fast_benchmark()
        .with_clusters(20)
        .with_sizes(vec![2, 4], vec![0.5, 0.5])
        .with_seed(404);
    let clusters = generate_dataset(&cfg).unwrap();
    let r = rule();
    let init = initial_params(&clusters).unwrap();
    let fit = fit_mle(&clusters, &r, &init, &FitOptions::default()).unwrap();
    let report = estimate_with_ci(
        &EstimandSpec::overall_effect(0.5, 0.5),
        &clusters,
        &fit.params,
        &r,
        Some(2),
        7,
        0.95,
    )
    .unwrap();
    assert_eq!(report.point, 0.0);
    assert!(report.ci_lower <= 0.0 && 0.0 <= report.ci_upper);
}
