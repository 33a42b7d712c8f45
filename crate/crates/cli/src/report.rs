//! Run configuration, check reports and their serialization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checks::{self, Context};

/// Seed used when neither `--seed`, `RL_SEED` nor a config file sets one.
pub const DEFAULT_SEED: u64 = 0x5EED_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Overrides of the per-check default tolerances.
    pub tolerances: BTreeMap<String, f64>,
    pub output: Option<PathBuf>,
    pub format: Format,
    /// Include `runtime_ms` in serialized reports.
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, tolerances: BTreeMap::new(), output: None, format: Format::Json, timings: false }
    }
}

/// Contents of a `--config` TOML file; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub timings: Option<bool>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown check id `{0}`")]
    UnknownCheck(String),
    #[error("unknown tolerance override `{0}`")]
    UnknownTolerance(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Config { path: PathBuf, source: toml::de::Error },
    #[error("invalid RL_SEED `{0}`")]
    Seed(String),
    #[error("{context}: {source}")]
    Core { context: String, source: hamrearr_core::Error },
    #[error("{0}")]
    Usage(String),
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

impl RunConfig {
    /// Layers the config file, then `RL_SEED`, then explicit flags over the
    /// defaults.
    pub fn resolve(
        config_path: Option<&Path>,
        env_seed: Option<&str>,
        seed: Option<u64>,
        output: Option<PathBuf>,
        format: Option<Format>,
    ) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_path {
            let file: ConfigFile = toml::from_str(&read_file(path)?)
                .map_err(|source| CliError::Config { path: path.to_path_buf(), source })?;
            cfg.seed = file.seed.unwrap_or(cfg.seed);
            cfg.output = file.output;
            cfg.format = file.format.unwrap_or(cfg.format);
            cfg.timings = file.timings.unwrap_or(false);
            for id in file.tolerances.keys() {
                if checks::find(id).is_none() {
                    return Err(CliError::UnknownTolerance(id.clone()));
                }
            }
            cfg.tolerances = file.tolerances;
        }
        if let Some(text) = env_seed {
            cfg.seed = text.trim().parse().map_err(|_| CliError::Seed(text.to_string()))?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if output.is_some() {
            cfg.output = output;
        }
        if let Some(f) = format {
            cfg.format = f;
        }
        Ok(cfg)
    }

    pub fn tolerance(&self, check: &checks::Check) -> f64 {
        self.tolerances.get(check.id).copied().unwrap_or(check.default_tolerance)
    }
}

/// One executed check. Fields serialize in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check_id: String,
    pub reference: String,
    /// SHA-256 of the check id, seed, tolerance and input description.
    pub inputs_digest: String,
    pub values: BTreeMap<String, f64>,
    pub holds: bool,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    /// Set when the check could not run; `holds` is then false.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn digest(id: &str, seed: u64, tolerance: f64, inputs: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{id}\n{seed}\n{tolerance:?}\n{inputs}").as_bytes());
    hex::encode(h.finalize())
}

/// Runs the named checks concurrently and returns their reports sorted by
/// id. Unknown ids are rejected before anything runs.
pub fn run_suite(names: &[String], config: &RunConfig) -> Result<Vec<CheckReport>, CliError> {
    let mut selected = Vec::with_capacity(names.len());
    for name in names {
        let check = checks::find(name).ok_or_else(|| CliError::UnknownCheck(name.clone()))?;
        if !selected.iter().any(|c: &&checks::Check| c.id == check.id) {
            selected.push(check);
        }
    }
    selected.sort_by_key(|c| c.id);
    let reports = std::thread::scope(|scope| {
        let handles: Vec<_> = selected
            .iter()
            .map(|check| scope.spawn(move || run_one(check, config)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("check panicked")).collect()
    });
    Ok(reports)
}

fn run_one(check: &checks::Check, config: &RunConfig) -> CheckReport {
    let tolerance = config.tolerance(check);
    let ctx = Context { seed: config.seed, tolerance };
    let start = Instant::now();
    let result = (check.run)(&ctx);
    let runtime_ms = config.timings.then(|| start.elapsed().as_secs_f64() * 1e3);
    match result {
        Ok(outcome) => CheckReport {
            check_id: check.id.to_string(),
            reference: check.reference.to_string(),
            inputs_digest: digest(check.id, config.seed, tolerance, &outcome.inputs),
            values: outcome.values,
            holds: outcome.holds,
            tolerance,
            runtime_ms,
            error: None,
        },
        Err(e) => CheckReport {
            check_id: check.id.to_string(),
            reference: check.reference.to_string(),
            inputs_digest: digest(check.id, config.seed, tolerance, ""),
            values: BTreeMap::new(),
            holds: false,
            tolerance,
            runtime_ms,
            error: Some(e.to_string()),
        },
    }
}

pub fn all_check_ids() -> Vec<String> {
    checks::CHECKS.iter().map(|c| c.id.to_string()).collect()
}

pub fn to_json(reports: &[CheckReport]) -> String {
    let mut text = serde_json::to_string_pretty(reports).expect("reports serialize");
    text.push('\n');
    text
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// One row per reported value.
pub fn to_csv(reports: &[CheckReport]) -> String {
    let mut out = String::from("check_id,reference,inputs_digest,holds,tolerance,runtime_ms,error,value_name,value\n");
    for r in reports {
        let runtime = r.runtime_ms.map(|t| format!("{t:?}")).unwrap_or_default();
        let error = r.error.as_deref().unwrap_or("");
        let prefix = format!(
            "{},{},{},{},{:?},{},{}",
            csv_field(&r.check_id),
            csv_field(&r.reference),
            r.inputs_digest,
            r.holds,
            r.tolerance,
            runtime,
            csv_field(error)
        );
        if r.values.is_empty() {
            out.push_str(&format!("{prefix},,\n"));
        }
        for (name, value) in &r.values {
            out.push_str(&format!("{prefix},{},{value:?}\n", csv_field(name)));
        }
    }
    out
}

pub fn render(reports: &[CheckReport], format: Format) -> String {
    match format {
        Format::Json => to_json(reports),
        Format::Csv => to_csv(reports),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_fields_are_quoted_when_needed() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
    }

    #[test]
    fn digest_covers_every_input() {
        let base = digest("id", 1, 0.5, "in");
        assert_eq!(base, digest("id", 1, 0.5, "in"));
        assert_ne!(base, digest("id", 2, 0.5, "in"));
        assert_ne!(base, digest("id", 1, 0.25, "in"));
        assert_ne!(base, digest("id", 1, 0.5, "other"));
        assert_ne!(base, digest("other", 1, 0.5, "in"));
    }

    #[test]
    fn tolerance_override_applies_to_named_check() {
        let check = checks::find("t_closed_form").unwrap();
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.tolerance(check), check.default_tolerance);
        cfg.tolerances.insert("t_closed_form".into(), 0.125);
        assert_eq!(cfg.tolerance(check), 0.125);
    }

    #[test]
    fn empty_report_renders() {
        assert_eq!(to_json(&[]), "[]\n");
        assert_eq!(to_csv(&[]).lines().count(), 1);
    }
}
