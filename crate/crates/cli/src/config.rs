//! Argument structs and configuration resolution.
//!
//! Precedence: command-line flag > `--config` TOML entry > built-in default.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Long-format CSV: one row per individual, with a header.
    #[arg(long)]
    pub data: PathBuf,
    /// Cluster identifier column.
    #[arg(long)]
    pub id_col: Option<String>,
    /// Binary treatment column (0/1).
    #[arg(long)]
    pub treatment_col: Option<String>,
    /// Outcome column (real-valued).
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Covariate columns, comma separated; default: every other column in
    /// header order.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML file supplying defaults for any omitted flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSON path for the fitted model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    /// Gradient max-norm tolerance of the fit.
    #[arg(long)]
    pub fit_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fitted-model JSON from `cipw fit`; omitted = fit on the fly.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Policy α, repeatable.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Contrast pair "α,α′", repeatable.
    #[arg(long = "contrast")]
    pub contrasts: Vec<String>,
    /// Sub-sample size per stratum; omitted = exhaustive enumeration.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Multiply reported estimates by 1000 in the CSV.
    #[arg(long)]
    pub scale_1000: bool,
    /// Also report the independent-assignment comparator estimands.
    #[arg(long)]
    pub type_b: bool,
    #[arg(long)]
    pub fit_tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of replicate datasets.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Clusters per replicate.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Generating-process profile: "benchmark" (sizes 8/22/40) or "fast"
    /// (sizes 4/8/12).
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    #[arg(long = "contrast")]
    pub contrasts: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    #[arg(long)]
    pub fit_tol: Option<f64>,
    /// Worker threads for replicates.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Reuse a truth table written by `cipw truth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// How truth is determined when not supplied: "sim" (grid and
    /// tabulation) or "quadrature" (root solving and enumeration).
    #[arg(long)]
    pub truth_mode: Option<String>,
    #[arg(long)]
    pub m1: Option<u64>,
    #[arg(long)]
    pub m2: Option<u64>,
    #[arg(long)]
    pub m3: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TruthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m1: Option<u64>,
    #[arg(long)]
    pub m2: Option<u64>,
    #[arg(long)]
    pub m3: Option<u64>,
    /// γ-grid spacing.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Cluster size of the ω vs independent-assignment comparison table.
    #[arg(long)]
    pub omega_compare_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flat TOML config mirroring the flag names.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub id_col: Option<String>,
    pub treatment_col: Option<String>,
    pub outcome_col: Option<String>,
    pub covariate_cols: Option<Vec<String>>,
    pub quad_nodes: Option<usize>,
    pub fit_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub alpha: Option<Vec<f64>>,
    pub contrast: Option<Vec<String>>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub ci_level: Option<f64>,
    pub replicates: Option<usize>,
    pub clusters: Option<usize>,
    pub profile: Option<String>,
    pub threads: Option<usize>,
    pub truth_mode: Option<String>,
    pub m1: Option<u64>,
    pub m2: Option<u64>,
    pub m3: Option<u64>,
    pub grid_step: Option<f64>,
    pub omega_compare_size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses "a,b" into an (α, α′) pair.
pub fn parse_contrast(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("contrast must be \"alpha,alpha_prime\", got {text:?}");
    }
    let a: f64 = parts[0]
        .parse()
        .with_context(|| format!("contrast alpha {:?}", parts[0]))?;
    let b: f64 = parts[1]
        .parse()
        .with_context(|| format!("contrast alpha_prime {:?}", parts[1]))?;
    Ok((a, b))
}

/// Contrast pairs must reference policies from the α list.
pub fn check_contrasts(alphas: &[f64], contrasts: &[(f64, f64)]) -> Result<()> {
    for &(a, b) in contrasts {
        for v in [a, b] {
            if !alphas.iter().any(|&x| (x - v).abs() < 1e-12) {
                bail!("contrast value {v} is not in the alpha list {alphas:?}");
            }
        }
    }
    Ok(())
}
