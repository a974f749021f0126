//! `cipw simulate`: replication study with a bias/coverage/ASE/ESE/SER
//! summary table.

use anyhow::{bail, Context, Result};
use cipw_core::estimators::estimate_batch;
use cipw_core::rng::derive_seed;
use cipw_core::simulation::{
    assemble_truth_with_grid, generate_dataset, truth_by_quadrature, TruthTable,
};
use cipw_core::{EstimandSpec, QuadratureRule};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{check_contrasts, parse_contrast, pick, FileConfig, SimulateArgs};
use crate::io;

use super::truth::{default_contrasts, profile_config, DEFAULT_ALPHAS};

struct ReplicateOutcome {
    points: Vec<f64>,
    ses: Vec<f64>,
    covered: Vec<bool>,
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let profile = args
        .profile
        .clone()
        .or_else(|| file.profile.clone())
        .unwrap_or_else(|| "benchmark".into());
    let mut cfg = profile_config(&profile)?;
    cfg.clusters = pick(args.clusters, file.clusters, 125);
    let master_seed = pick(args.seed, file.seed, 1);
    cfg.seed = master_seed;
    let replicates = pick(args.replicates, file.replicates, 200);
    let k = pick(args.k, file.k, 1);
    let quad_nodes = pick(args.quad_nodes, file.quad_nodes, QuadratureRule::DEFAULT_NODES);
    let ci_level = pick(args.ci_level, file.ci_level, 0.95);
    let fit_tol = pick(args.fit_tol, file.fit_tol, 1e-6);
    let threads = pick(args.threads, file.threads, 0);
    let alphas = if args.alphas.is_empty() {
        file.alpha.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec())
    } else {
        args.alphas.clone()
    };
    let contrasts = if args.contrasts.is_empty() {
        match &file.contrast {
            Some(texts) => texts
                .iter()
                .map(|t| parse_contrast(t))
                .collect::<Result<Vec<_>>>()?,
            None => default_contrasts(&alphas),
        }
    } else {
        args.contrasts
            .iter()
            .map(|t| parse_contrast(t))
            .collect::<Result<Vec<_>>>()?
    };
    check_contrasts(&alphas, &contrasts)?;
    let truth_mode = args.truth_mode.clone().or_else(|| file.truth_mode.clone());

    let specs = super::estimand_grid(&alphas, &contrasts, false);
    let truth_values = resolve_truth(&args, &file, &cfg, &alphas, &specs, truth_mode.as_deref())?;

    let rule = QuadratureRule::gauss_hermite(quad_nodes)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building worker pool")?;
    eprintln!(
        "simulate: profile {profile}, {replicates} replicates of {} clusters, k={k}",
        cfg.clusters
    );
    let outcomes: Vec<Option<ReplicateOutcome>> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rep_cfg = cfg.clone();
                rep_cfg.seed = derive_seed(master_seed, r as u64);
                let data = generate_dataset(&rep_cfg).ok()?;
                let fit = super::fit_model(&data, &rule, fit_tol, 500).ok()?;
                let reports = estimate_batch(
                    &specs,
                    &data,
                    &fit.params,
                    &rule,
                    Some(k),
                    rep_cfg.seed,
                    ci_level,
                )
                .ok()?;
                let mut points = Vec::with_capacity(reports.len());
                let mut ses = Vec::with_capacity(reports.len());
                let mut covered = Vec::with_capacity(reports.len());
                for (report, truth) in reports.iter().zip(&truth_values) {
                    points.push(report.point);
                    ses.push(report.std_error);
                    covered.push(report.ci_lower <= *truth && *truth <= report.ci_upper);
                }
                Some(ReplicateOutcome {
                    points,
                    ses,
                    covered,
                })
            })
            .collect()
    });

    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures * 20 > replicates {
        bail!(
            "{failures} of {replicates} replicates failed (> 5%); aborting the summary"
        );
    }
    let kept: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let rows = summarize(&specs, &truth_values, &kept, replicates, failures);
    write_summary(&args.out.join("summary.csv"), &rows)?;
    eprintln!(
        "simulate: {} rows summarized over {} kept replicates ({failures} failures) -> {}",
        rows.len(),
        kept.len(),
        args.out.join("summary.csv").display()
    );
    Ok(())
}

fn resolve_truth(
    args: &SimulateArgs,
    file: &FileConfig,
    cfg: &cipw_core::simulation::DgpConfig,
    alphas: &[f64],
    specs: &[EstimandSpec],
    truth_mode: Option<&str>,
) -> Result<Vec<f64>> {
    if let Some(path) = &args.truth {
        let lookup = read_truth_csv(path)?;
        return specs
            .iter()
            .map(|s| {
                lookup
                    .get(&truth_key(s))
                    .copied()
                    .ok_or_else(|| anyhow::anyhow!("{} missing from {}", s.describe(), path.display()))
            })
            .collect();
    }
    let small_sizes = cfg.sizes.support.iter().all(|&n| n <= 16);
    let mode = truth_mode.unwrap_or(if small_sizes { "quadrature" } else { "sim" });
    let table: TruthTable = match mode {
        "quadrature" => {
            if !small_sizes {
                bail!("truth_mode \"quadrature\" needs all cluster sizes ≤ 16; use \"sim\"");
            }
            let rule = QuadratureRule::gauss_hermite(QuadratureRule::DEFAULT_NODES)?;
            truth_by_quadrature(cfg, alphas, &rule, 12_000, derive_seed(cfg.seed, 0xffff))?
        }
        "sim" => {
            let m1 = pick(args.m1, file.m1, 1_000_000);
            let m2 = pick(args.m2, file.m2, 1_000_000);
            let m3 = pick(args.m3, file.m3, 1_000_000);
            let grid = pick(None, file.grid_step, 0.005);
            eprintln!("simulate: determining truth empirically (m1={m1}, m2={m2}, m3={m3})");
            assemble_truth_with_grid(cfg, alphas, m1, m2, m3, grid)?
        }
        other => bail!("unknown truth_mode {other:?}"),
    };
    specs.iter().map(|s| Ok(table.value(s)?)).collect()
}

fn truth_key(spec: &EstimandSpec) -> (String, u64, u64) {
    (
        spec.kind.label().to_string(),
        spec.alpha.to_bits(),
        spec.alpha_prime.unwrap_or(f64::NAN).to_bits(),
    )
}

fn read_truth_csv(path: &Path) -> Result<BTreeMap<(String, u64, u64), f64>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening truth table {}", path.display()))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let kind = record.get(0).unwrap_or_default().to_string();
        let alpha: f64 = record.get(1).unwrap_or_default().parse()?;
        let alpha_prime = match record.get(2) {
            Some("") | None => f64::NAN,
            Some(text) => text.parse()?,
        };
        let value: f64 = record.get(3).unwrap_or_default().parse()?;
        map.insert((kind, alpha.to_bits(), alpha_prime.to_bits()), value);
    }
    Ok(map)
}

pub struct SummaryRow {
    pub estimand: String,
    pub alpha: f64,
    pub alpha_prime: Option<f64>,
    pub truth: f64,
    pub bias: f64,
    pub cov_pct: f64,
    pub ase: f64,
    pub ese: f64,
    pub ser: f64,
    pub replicates: usize,
    pub failures: usize,
}

fn summarize(
    specs: &[EstimandSpec],
    truth: &[f64],
    kept: &[&ReplicateOutcome],
    replicates: usize,
    failures: usize,
) -> Vec<SummaryRow> {
    let m = kept.len() as f64;
    specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let mean_point = kept.iter().map(|o| o.points[j]).sum::<f64>() / m;
            let ese = (kept
                .iter()
                .map(|o| (o.points[j] - mean_point).powi(2))
                .sum::<f64>()
                / (m - 1.0))
                .sqrt();
            let ase = kept.iter().map(|o| o.ses[j]).sum::<f64>() / m;
            let covered = kept.iter().filter(|o| o.covered[j]).count() as f64;
            SummaryRow {
                estimand: spec.kind.label().to_string(),
                alpha: spec.alpha,
                alpha_prime: spec.alpha_prime,
                truth: truth[j],
                bias: mean_point - truth[j],
                cov_pct: 100.0 * covered / m,
                ase,
                ese,
                ser: ase / ese,
                replicates,
                failures,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = io::open_csv(path)?;
    writer.write_record([
        "estimator",
        "alpha",
        "alpha_prime",
        "truth",
        "bias",
        "cov_pct",
        "ase",
        "ese",
        "ser",
        "replicates",
        "failures",
    ])?;
    for row in rows {
        writer.write_record([
            row.estimand.clone(),
            io::fmt_float(row.alpha),
            row.alpha_prime.map(io::fmt_float).unwrap_or_default(),
            io::fmt_float(row.truth),
            io::fmt_float(row.bias),
            io::fmt_float(row.cov_pct),
            io::fmt_float(row.ase),
            io::fmt_float(row.ese),
            io::fmt_float(row.ser),
            row.replicates.to_string(),
            row.failures.to_string(),
        ])?;
    }
    writer.flush().context("writing summary")?;
    Ok(())
}
