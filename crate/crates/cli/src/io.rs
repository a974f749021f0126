//! CSV ingestion and typed output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use cipw_core::{ClusterData, ClusterId};
use serde::{Deserialize, Serialize};

use crate::config::DataArgs;

/// Input-schema violations (missing columns, malformed cells).
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "schema error: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

pub struct LoadedData {
    pub clusters: Vec<ClusterData>,
    pub covariate_names: Vec<String>,
}

/// Reads a long-format CSV (one row per individual) into clusters, sorted
/// by cluster id for reproducible summation order.
pub fn read_csv(args: &DataArgs, defaults: &ResolvedColumns) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&args.data)
        .with_context(|| format!("opening {}", args.data.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("reading CSV header")?
        .iter()
        .map(str::to_owned)
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SchemaError(format!("column {name:?} not found in header {headers:?}")).into())
    };
    let id_idx = col(&defaults.id)?;
    let treat_idx = col(&defaults.treatment)?;
    let outcome_idx = col(&defaults.outcome)?;
    let covariate_names: Vec<String> = match &defaults.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_idx && *i != treat_idx && *i != outcome_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if covariate_names.is_empty() {
        return Err(SchemaError("no covariate columns".into()).into());
    }
    let cov_idx: Vec<usize> = covariate_names
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;

    struct Row {
        treated: bool,
        outcome: f64,
        covariates: Vec<f64>,
    }
    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (row_number, record) in reader.records().enumerate() {
        let line = row_number + 2; // header is line 1
        let record = record.with_context(|| format!("reading CSV line {line}"))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| SchemaError(format!("line {line}: missing field {i}")).into())
        };
        let id = field(id_idx)?.to_owned();
        let treated = match field(treat_idx)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(SchemaError(format!(
                    "line {line}: treatment must be 0 or 1, got {other:?}"
                ))
                .into())
            }
        };
        let outcome: f64 = field(outcome_idx)?
            .parse()
            .map_err(|_| SchemaError(format!("line {line}: outcome is not a number")))?;
        let covariates: Vec<f64> = cov_idx
            .iter()
            .map(|&i| {
                field(i)?.parse::<f64>().map_err(|_| {
                    SchemaError(format!(
                        "line {line}: covariate {:?} is not a number",
                        headers[i]
                    ))
                    .into()
                })
            })
            .collect::<Result<_>>()?;
        groups.entry(id).or_default().push(Row {
            treated,
            outcome,
            covariates,
        });
    }
    let mut clusters = Vec::with_capacity(groups.len());
    for (id, rows) in groups {
        let covariates = rows.iter().map(|r| r.covariates.clone()).collect();
        let treatment = rows.iter().map(|r| r.treated).collect();
        let outcome = rows.iter().map(|r| r.outcome).collect();
        clusters.push(ClusterData::new(
            ClusterId(id),
            covariates,
            treatment,
            outcome,
        )?);
    }
    if clusters.is_empty() {
        return Err(SchemaError("CSV contains no data rows".into()).into());
    }
    Ok(LoadedData {
        clusters,
        covariate_names,
    })
}

pub struct ResolvedColumns {
    pub id: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Option<Vec<String>>,
}

impl ResolvedColumns {
    pub fn from(args: &DataArgs, file: &crate::config::FileConfig) -> Self {
        ResolvedColumns {
            id: args
                .id_col
                .clone()
                .or_else(|| file.id_col.clone())
                .unwrap_or_else(|| "cluster_id".into()),
            treatment: args
                .treatment_col
                .clone()
                .or_else(|| file.treatment_col.clone())
                .unwrap_or_else(|| "treatment".into()),
            outcome: args
                .outcome_col
                .clone()
                .or_else(|| file.outcome_col.clone())
                .unwrap_or_else(|| "outcome".into()),
            covariates: args
                .covariate_cols
                .clone()
                .or_else(|| file.covariate_cols.clone()),
        }
    }
}

/// Fitted-model JSON document (schema_version 1).
#[derive(Serialize, Deserialize, Debug)]
pub struct ModelFile {
    pub schema_version: u32,
    pub covariates: Vec<String>,
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub sigma: f64,
    pub diagnostics: ModelDiagnostics,
    pub settings: ModelSettings,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ModelDiagnostics {
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ModelSettings {
    pub quad_nodes: usize,
    pub fit_tol: f64,
    pub max_iter: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    let model: ModelFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing model {}", path.display()))?;
    if model.schema_version != 1 {
        return Err(SchemaError(format!(
            "unsupported model schema_version {}",
            model.schema_version
        ))
        .into());
    }
    Ok(model)
}

/// Sidecar JSON accompanying the estimates CSV: full θ̂ per estimand plus
/// Σ̂ (full when the stack is small, diagonal and target row otherwise).
#[derive(Serialize, Debug)]
pub struct EstimateSidecar {
    pub schema_version: u32,
    pub seed: u64,
    pub k: Option<usize>,
    pub ci_level: f64,
    pub scale: f64,
    pub runs: Vec<EstimateRun>,
}

#[derive(Serialize, Debug)]
pub struct EstimateRun {
    pub estimand: String,
    pub alpha: f64,
    pub alpha_prime: Option<f64>,
    pub point: f64,
    pub std_error: f64,
    pub theta_labels: Vec<String>,
    pub theta: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub sigma_target_row: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_full: Option<Vec<f64>>,
    pub u_condition: f64,
}

pub fn open_csv(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Canonical float formatting for CSV output (round-trip parseable).
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}
