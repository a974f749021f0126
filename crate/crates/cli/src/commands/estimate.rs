//! `cipw estimate`: IPW estimates with sandwich-variance Wald intervals.

use anyhow::{anyhow, Context, Result};
use cipw_core::estimators::estimate_batch;
use cipw_core::{Error as CoreError, PropensityParams, QuadratureRule};

use crate::config::{check_contrasts, parse_contrast, pick, EstimateArgs, FileConfig};
use crate::io::{self, EstimateRun, EstimateSidecar, ResolvedColumns};

pub fn run(args: EstimateArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let columns = ResolvedColumns::from(&args.data, &file);
    let quad_nodes = pick(args.quad_nodes, file.quad_nodes, QuadratureRule::DEFAULT_NODES);
    let ci_level = pick(args.ci_level, file.ci_level, 0.95);
    let seed = pick(args.seed, file.seed, 0);
    let fit_tol = pick(args.fit_tol, file.fit_tol, 1e-6);
    let k = args.k.or(file.k);
    let alphas = if args.alphas.is_empty() {
        file.alpha.clone().unwrap_or_default()
    } else {
        args.alphas.clone()
    };
    if alphas.is_empty() {
        return Err(io::SchemaError("no --alpha given".into()).into());
    }
    let contrast_texts = if args.contrasts.is_empty() {
        file.contrast.clone().unwrap_or_default()
    } else {
        args.contrasts.clone()
    };
    let contrasts = contrast_texts
        .iter()
        .map(|t| parse_contrast(t))
        .collect::<Result<Vec<_>>>()?;
    check_contrasts(&alphas, &contrasts)?;

    let loaded = io::read_csv(&args.data, &columns)?;
    let rule = QuadratureRule::gauss_hermite(quad_nodes)?;
    let params = match &args.model {
        Some(path) => {
            let model = io::read_model(path)?;
            PropensityParams::new(model.beta0, model.beta1, model.sigma)?
        }
        None => super::fit_model(&loaded.clusters, &rule, fit_tol, 500)?.params,
    };

    let specs = super::estimand_grid(&alphas, &contrasts, args.type_b);
    let reports = estimate_batch(&specs, &loaded.clusters, &params, &rule, k, seed, ci_level)
        .map_err(|e| match e {
            CoreError::Coverage { n, s } => anyhow!(CoreError::Coverage { n, s }).context(
                "a counterfactual stratum lacks weight support; increase --k or check the data",
            ),
            other => anyhow!(other),
        })?;

    let scale = if args.scale_1000 { 1000.0 } else { 1.0 };
    let csv_path = args.out.join("estimates.csv");
    let mut writer = io::open_csv(&csv_path)?;
    writer.write_record([
        "estimand",
        "alpha",
        "alpha_prime",
        "k",
        "seed",
        "level",
        "point",
        "std_error",
        "ci_lower",
        "ci_upper",
    ])?;
    for report in &reports {
        writer.write_record([
            report.spec.kind.label().to_string(),
            io::fmt_float(report.spec.alpha),
            report
                .spec
                .alpha_prime
                .map(io::fmt_float)
                .unwrap_or_default(),
            report.k.map(|v| v.to_string()).unwrap_or_default(),
            report.seed.to_string(),
            io::fmt_float(report.level),
            io::fmt_float(report.point * scale),
            io::fmt_float(report.std_error * scale),
            io::fmt_float(report.ci_lower * scale),
            io::fmt_float(report.ci_upper * scale),
        ])?;
    }
    writer.flush().context("writing estimates.csv")?;

    let sidecar = EstimateSidecar {
        schema_version: 1,
        seed,
        k,
        ci_level,
        scale,
        runs: reports
            .iter()
            .map(|r| EstimateRun {
                estimand: r.spec.kind.label().to_string(),
                alpha: r.spec.alpha,
                alpha_prime: r.spec.alpha_prime,
                point: r.point,
                std_error: r.std_error,
                theta_labels: r.theta_labels.clone(),
                theta: r.theta.clone(),
                sigma_diag: r.sigma_diag.clone(),
                sigma_target_row: r.sigma_target_row.clone(),
                sigma_full: r.sigma_full.clone(),
                u_condition: r.u_condition,
            })
            .collect(),
    };
    io::write_json(&args.out.join("estimates_sidecar.json"), &sidecar)?;
    for r in &reports {
        if r.u_condition > cipw_core::mestimation::CONDITION_WARN_LIMIT {
            eprintln!(
                "warning: {} stack is ill-conditioned (estimate {:.2e})",
                r.spec.describe(),
                r.u_condition
            );
        }
    }
    eprintln!(
        "estimate: {} estimands on {} clusters -> {}",
        reports.len(),
        loaded.clusters.len(),
        csv_path.display()
    );
    Ok(())
}
