//! Report serialization. Report bodies carry no timestamps; run metadata goes
//! to a `.meta.json` sidecar next to the output file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use haipw_core::EstimateReport;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub schema_version: u32,
    pub reports: Vec<EstimateReport>,
}

/// Pretty JSON with a trailing newline.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Schema(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// `{"schema_version": 1, ...fields of body}`.
pub fn versioned(body: Value) -> Value {
    let mut doc = json!({"schema_version": SCHEMA_VERSION});
    if let (Some(doc), Value::Object(fields)) = (doc.as_object_mut(), body) {
        doc.extend(fields);
    }
    doc
}

pub fn estimates_markdown(reports: &[EstimateReport]) -> String {
    let mut out = String::from("| Estimator | θ̂ | V̂ | CI low | CI high | n |\n|---|---:|---:|---:|---:|---:|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
            r.estimator, r.theta_hat, r.variance_hat, r.ci.0, r.ci.1, r.n
        );
    }
    out
}

pub fn render_estimates(reports: &[EstimateReport], format: ReportFormat) -> Result<String, CliError> {
    if reports.is_empty() {
        return Err(CliError::Schema("no estimates to report".into()));
    }
    match format {
        ReportFormat::Json => to_json_text(&EstimateDocument { schema_version: SCHEMA_VERSION, reports: reports.to_vec() }),
        ReportFormat::Markdown => Ok(estimates_markdown(reports)),
    }
}

/// Writes estimate reports to `path`, or to standard output when absent.
pub fn write_report(reports: &[EstimateReport], format: ReportFormat, path: Option<&Path>) -> Result<(), CliError> {
    emit(&render_estimates(reports, format)?, path)
}

pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p.display(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Run metadata, including wall-clock time, kept out of the report body.
pub fn write_sidecar(out: &Path, command: &str, seed: u64, warnings: &[String]) -> Result<(), CliError> {
    let meta = json!({
        "command": command,
        "seed": seed,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "created_unix_ms": haipw_client::cache::now_millis(),
        "warnings": warnings,
    });
    let path = sidecar_path(out);
    std::fs::write(&path, to_json_text(&meta)?).map_err(|e| CliError::io(path.display(), e))
}
