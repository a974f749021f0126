//! `cipw truth`: empirical truth tables and the ω comparison data.

use anyhow::{bail, Context, Result};
use cipw_core::policy::type_b_weights;
use cipw_core::simulation::{assemble_truth_with_grid, DgpConfig, TruthTable};
use cipw_core::{EstimandKind, EstimandSpec};
use std::path::Path;

use crate::config::{pick, FileConfig, TruthArgs};
use crate::io;

pub const DEFAULT_ALPHAS: [f64; 3] = [0.4, 0.5, 0.55];

pub fn profile_config(name: &str) -> Result<DgpConfig> {
    match name {
        "benchmark" => Ok(DgpConfig::benchmark()),
        "fast" => Ok(DgpConfig::fast_benchmark()),
        other => bail!("unknown profile {other:?}; expected \"benchmark\" or \"fast\""),
    }
}

/// Ordered contrast pairs (later policy first), matching the usual
/// presentation of the replication table.
pub fn default_contrasts(alphas: &[f64]) -> Vec<(f64, f64)> {
    let mut pairs = Vec::new();
    for i in 0..alphas.len() {
        for j in 0..i {
            pairs.push((alphas[i], alphas[j]));
        }
    }
    pairs
}

pub fn run(args: TruthArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_ref())?;
    let profile = args
        .profile
        .clone()
        .or_else(|| file.profile.clone())
        .unwrap_or_else(|| "benchmark".into());
    let mut cfg = profile_config(&profile)?;
    cfg.seed = pick(args.seed, file.seed, 0);
    let alphas = if args.alphas.is_empty() {
        file.alpha.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec())
    } else {
        args.alphas.clone()
    };
    let m1 = pick(args.m1, file.m1, 1_000_000);
    let m2 = pick(args.m2, file.m2, 1_000_000);
    let m3 = pick(args.m3, file.m3, 1_000_000);
    let grid_step = pick(args.grid_step, file.grid_step, 0.005);
    let compare_size = pick(args.omega_compare_size, file.omega_compare_size, 8);

    let table = assemble_truth_with_grid(&cfg, &alphas, m1, m2, m3, grid_step)?;
    write_truth_files(&args.out, &table, compare_size)?;
    eprintln!(
        "truth: {} policies over sizes {:?} (m1={m1}, m2={m2}, m3={m3}) -> {}",
        alphas.len(),
        cfg.sizes.support,
        args.out.display()
    );
    Ok(())
}

pub fn write_truth_files(out: &Path, table: &TruthTable, compare_size: usize) -> Result<()> {
    // Estimand values.
    let mut writer = io::open_csv(&out.join("truth.csv"))?;
    writer.write_record(["estimand", "alpha", "alpha_prime", "value"])?;
    let contrasts = default_contrasts(&table.alphas);
    for &kind in &[EstimandKind::Mu, EstimandKind::Mu0, EstimandKind::Mu1] {
        for &a in &table.alphas {
            let spec = EstimandSpec {
                kind,
                alpha: a,
                alpha_prime: None,
            };
            writer.write_record([
                kind.label().to_string(),
                io::fmt_float(a),
                String::new(),
                io::fmt_float(table.value(&spec)?),
            ])?;
        }
    }
    for &kind in &[
        EstimandKind::OverallEffect,
        EstimandKind::Spillover0,
        EstimandKind::Spillover1,
    ] {
        for &(a, b) in &contrasts {
            let spec = EstimandSpec {
                kind,
                alpha: a,
                alpha_prime: Some(b),
            };
            writer.write_record([
                kind.label().to_string(),
                io::fmt_float(a),
                io::fmt_float(b),
                io::fmt_float(table.value(&spec)?),
            ])?;
        }
    }
    writer.flush().context("writing truth.csv")?;

    // Counterfactual intercepts.
    let mut writer = io::open_csv(&out.join("gamma.csv"))?;
    writer.write_record(["alpha", "gamma0"])?;
    for (&a, &g) in table.alphas.iter().zip(&table.gamma0) {
        writer.write_record([io::fmt_float(a), io::fmt_float(g)])?;
    }
    writer.flush().context("writing gamma.csv")?;

    // Full ω table.
    let mut writer = io::open_csv(&out.join("omega.csv"))?;
    writer.write_record(["alpha", "n", "s", "omega"])?;
    for (ai, &a) in table.alphas.iter().enumerate() {
        for (&n, row) in &table.omega[ai] {
            for (s, &w) in row.iter().enumerate() {
                writer.write_record([
                    io::fmt_float(a),
                    n.to_string(),
                    s.to_string(),
                    io::fmt_float(w),
                ])?;
            }
        }
    }
    writer.flush().context("writing omega.csv")?;

    // ω against the independent-assignment weights at the comparison size.
    let mut writer = io::open_csv(&out.join("omega_comparison.csv"))?;
    writer.write_record(["alpha", "n", "s", "omega", "omega_tv", "ratio"])?;
    for (ai, &a) in table.alphas.iter().enumerate() {
        if let Some(row) = table.omega[ai].get(&compare_size) {
            let tv = type_b_weights(a, compare_size);
            for s in 0..=compare_size {
                let ratio = if tv[s] > 0.0 { row[s] / tv[s] } else { f64::NAN };
                writer.write_record([
                    io::fmt_float(a),
                    compare_size.to_string(),
                    s.to_string(),
                    io::fmt_float(row[s]),
                    io::fmt_float(tv[s]),
                    io::fmt_float(ratio),
                ])?;
            }
        }
    }
    writer.flush().context("writing omega_comparison.csv")?;
    Ok(())
}
