//! `cipw fit`: propensity-model fit from CSV.

use anyhow::Result;
use cipw_core::QuadratureRule;

use crate::config::{pick, FileConfig, FitArgs};
use crate::io::{self, ModelDiagnostics, ModelFile, ModelSettings, ResolvedColumns};

pub fn run(args: FitArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let columns = ResolvedColumns::from(&args.data, &file);
    let quad_nodes = pick(args.quad_nodes, file.quad_nodes, QuadratureRule::DEFAULT_NODES);
    let fit_tol = pick(args.fit_tol, file.fit_tol, 1e-6);
    let max_iter = pick(args.max_iter, file.max_iter, 500);

    let loaded = io::read_csv(&args.data, &columns)?;
    let rule = QuadratureRule::gauss_hermite(quad_nodes)?;
    let fit = super::fit_model(&loaded.clusters, &rule, fit_tol, max_iter)?;

    let model = ModelFile {
        schema_version: 1,
        covariates: loaded.covariate_names,
        beta0: fit.params.beta0,
        beta1: fit.params.beta1.clone(),
        sigma: fit.params.sigma,
        diagnostics: ModelDiagnostics {
            log_likelihood: fit.log_likelihood,
            gradient_norm: fit.gradient_norm,
            iterations: fit.iterations,
        },
        settings: ModelSettings {
            quad_nodes,
            fit_tol,
            max_iter,
        },
    };
    io::write_json(&args.out, &model)?;
    eprintln!(
        "fit: {} clusters, log-likelihood {:.4}, gradient norm {:.2e}, {} iterations -> {}",
        loaded.clusters.len(),
        fit.log_likelihood,
        fit.gradient_norm,
        fit.iterations,
        args.out.display()
    );
    Ok(())
}
