//! CSV and manifest writers. Column sets are fixed by the `*_HEADER`
//! constants; `verify csv_schema` checks emitted files against them.

use std::fs;
use std::path::{Path, PathBuf};

use impulse_core::qlearn::EpisodeRecord;
use impulse_core::ImpulsePolicy;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAIN_HEADER: [&str; 5] = ["episode", "return", "interventions", "epsilon", "sup_norm_to_oracle"];
pub const POLICY_HEADER: [&str; 4] = ["state", "intervene", "action", "value"];
pub const VALUE_HEADER: [&str; 2] = ["state", "value"];
pub const RESIDUAL_HEADER: [&str; 2] = ["iteration", "residual"];
pub const SWEEP_HEADER: [&str; 7] = [
    "axis_value",
    "seed",
    "mean_return",
    "mean_interventions",
    "zone1_violations",
    "zone2_violations",
    "zone3_violations",
];
pub const REPORT_HEADER: [&str; 4] = ["property", "measured", "threshold", "pass"];

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>, Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

pub fn write_train(path: &Path, records: &[EpisodeRecord]) -> Result<(), Failure> {
    let mut w = writer(path, &TRAIN_HEADER)?;
    for r in records {
        let gap = r.sup_norm_to_oracle.map(|g| g.to_string()).unwrap_or_default();
        w.write_record([
            r.episode.to_string(),
            r.ret.to_string(),
            r.interventions.to_string(),
            r.epsilon.to_string(),
            gap,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `action` is empty where the policy does not intervene.
pub fn write_policy(path: &Path, policy: &ImpulsePolicy, values: &[f64]) -> Result<(), Failure> {
    let mut w = writer(path, &POLICY_HEADER)?;
    for (s, v) in values.iter().enumerate() {
        let a = policy.act(s);
        let action = a.act_index().map(|i| i.to_string()).unwrap_or_default();
        w.write_record([s.to_string(), (!a.is_null()).to_string(), action, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_values(path: &Path, values: &[f64]) -> Result<(), Failure> {
    let mut w = writer(path, &VALUE_HEADER)?;
    for (s, v) in values.iter().enumerate() {
        w.write_record([s.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals(path: &Path, residuals: &[f64]) -> Result<(), Failure> {
    let mut w = writer(path, &RESIDUAL_HEADER)?;
    for (k, r) in residuals.iter().enumerate() {
        w.write_record([(k + 1).to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub seed: u64,
    pub mean_return: f64,
    pub mean_interventions: f64,
    pub zone_violations: [f64; 3],
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), Failure> {
    let mut w = writer(path, &SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.axis_value.clone(),
            r.seed.to_string(),
            r.mean_return.to_string(),
            r.mean_interventions.to_string(),
            r.zone_violations[0].to_string(),
            r.zone_violations[1].to_string(),
            r.zone_violations[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub property: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `measured <= threshold`.
    pub fn at_most(property: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            property: property.into(),
            measured,
            threshold,
            pass: measured <= threshold,
        }
    }

    /// Passes when `measured >= threshold`.
    pub fn at_least(property: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            property: property.into(),
            measured,
            threshold,
            pass: measured >= threshold,
        }
    }
}

pub fn write_report(path: &Path, checks: &[Check]) -> Result<(), Failure> {
    let mut w = writer(path, &REPORT_HEADER)?;
    for c in checks {
        w.write_record([
            c.property.clone(),
            c.measured.to_string(),
            c.threshold.to_string(),
            c.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    schema_version: u32,
    master_seed: u64,
    started_unix_ms: u128,
    outputs: Vec<String>,
    config: Option<toml::Value>,
    problem: Option<toml::Table>,
}

/// Written once, before any work starts.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: Option<&ExperimentConfig>,
    problem: Option<toml::Table>,
    outputs: &[PathBuf],
) -> Result<PathBuf, Failure> {
    let started_unix_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let config = cfg
        .map(toml::Value::try_from)
        .transpose()
        .map_err(|e| Failure::Runtime(format!("manifest: {e}")))?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        master_seed: cfg.map(|c| c.master_seed).unwrap_or(0),
        started_unix_ms,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        config,
        problem,
    };
    let text = toml::to_string(&manifest).map_err(|e| Failure::Runtime(format!("manifest: {e}")))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text)?;
    Ok(path)
}

/// Header row of a CSV file.
pub fn read_header(path: &Path) -> Result<Vec<String>, Failure> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.headers()?.iter().map(str::to_owned).collect())
}
