//! Per-invocation plumbing: reading inputs (and recording their digests),
//! versioned configuration files, output sinks and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use blindmon::counting::{read_events_csv, TimeUnit, TrialDataset};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cli::{Format, GlobalArgs, Unit};
use crate::error::{CliError, CliResult};

/// Version of the configuration and output layouts in `schemas/`.
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record that accompanies every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u64,
    pub subcommand: &'static str,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub time_unit: Unit,
    /// The fully resolved configuration, defaults included.
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub timestamp: String,
}

pub struct Run {
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub unit: Unit,
    inputs: Vec<InputDigest>,
}

impl Run {
    pub fn new(subcommand: &'static str, global: &GlobalArgs) -> Self {
        Self {
            subcommand,
            seed: global.seed,
            out: global.out.clone(),
            format: global.format,
            unit: global.time_unit,
            inputs: Vec::new(),
        }
    }

    pub fn time_unit(&self) -> TimeUnit {
        self.unit.into()
    }

    pub fn unit_name(&self) -> &'static str {
        match self.unit {
            Unit::Years => "years",
            Unit::Days => "days",
        }
    }

    /// Calendar years to the user's unit.
    pub fn to_unit(&self, years: f64) -> f64 {
        self.time_unit().from_years(years)
    }

    /// The user's unit to calendar years.
    pub fn to_years(&self, value: f64) -> f64 {
        self.time_unit().to_years(value)
    }

    /// Resolve the output format, rejecting ones the subcommand cannot write.
    pub fn format_or(&self, default: Format, allowed: &[Format]) -> CliResult<Format> {
        let f = self.format.unwrap_or(default);
        if allowed.contains(&f) {
            Ok(f)
        } else {
            Err(CliError::validation(format!(
                "{} does not support --format {}; use one of {}",
                self.subcommand,
                format_name(f),
                allowed
                    .iter()
                    .map(|&f| format_name(f))
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }

    fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    /// Read a JSON configuration carrying `schema_version`; every other key
    /// must belong to `T`.
    pub fn load_config<T: DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let bytes = self.read(path)?;
        let ctx = || path.display().to_string();
        let mut value: Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::validation(format!("invalid JSON: {e}")).context(ctx()))?;
        let Some(obj) = value.as_object_mut() else {
            return Err(CliError::validation("expected a JSON object").context(ctx()));
        };
        match obj.remove("schema_version") {
            None => {
                return Err(CliError::validation(format!(
                    "missing \"schema_version\"; add \"schema_version\": {SCHEMA_VERSION}"
                ))
                .context(ctx()))
            }
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::validation(format!(
                    "unsupported schema_version {v}; this build reads {SCHEMA_VERSION}"
                ))
                .context(ctx()))
            }
        }
        serde_json::from_value(value)
            .map_err(|e| CliError::validation(e.to_string()).context(ctx()))
    }

    pub fn load_dataset(&mut self, path: &Path) -> CliResult<TrialDataset> {
        let bytes = self.read(path)?;
        read_events_csv(bytes.as_slice(), self.time_unit())
            .map_err(|e| CliError::from(e).context(path.display()))
    }

    pub fn manifest(&self, config: &impl Serialize) -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            time_unit: self.unit,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            inputs: self.inputs.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Write to `--out` or standard output.
    pub fn emit(&self, body: &[u8]) -> CliResult<()> {
        write_to(self.out.as_deref(), body)
    }

    /// JSON envelope `{"manifest": ..., "result": ...}`.
    pub fn emit_json(&self, config: &impl Serialize, result: &impl Serialize) -> CliResult<()> {
        let doc = serde_json::json!({
            "manifest": self.manifest(config),
            "result": result,
        });
        let mut body =
            serde_json::to_vec_pretty(&doc).map_err(|e| CliError::runtime(e.to_string()))?;
        body.push(b'\n');
        self.emit(&body)
    }

    /// Tabular or text output; the manifest goes to `<out>.manifest.json`
    /// next to the file, or to standard error when writing to standard output.
    pub fn emit_with_sidecar(&self, config: &impl Serialize, body: &[u8]) -> CliResult<()> {
        self.emit(body)?;
        let manifest = self.manifest(config);
        match &self.out {
            Some(out) => {
                let mut path = out.clone().into_os_string();
                path.push(".manifest.json");
                let mut text = serde_json::to_vec_pretty(&manifest)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                text.push(b'\n');
                write_to(Some(Path::new(&path)), &text)
            }
            None => {
                let line = serde_json::to_string(&manifest)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                eprintln!("manifest: {line}");
                Ok(())
            }
        }
    }
}

pub fn write_to(path: Option<&Path>, body: &[u8]) -> CliResult<()> {
    let result = match path {
        Some(p) => std::fs::write(p, body).map_err(|e| (p.display().to_string(), e)),
        None => std::io::stdout()
            .lock()
            .write_all(body)
            .map_err(|e| ("standard output".to_string(), e)),
    };
    result.map_err(|(what, e)| CliError::runtime(format!("cannot write {what}: {e}")))
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Json => "json",
        Format::Csv => "csv",
        Format::Text => "text",
    }
}

/// Serialize rows with a header into CSV bytes.
pub fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}
