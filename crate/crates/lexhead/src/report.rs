//! Versioned report records: every experiment writes one JSON document that
//! embeds its full config and a hash of it, plus optional flat CSV exports
//! for plotting. Identical configs and inputs produce byte-identical files.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report<C: Serialize, P: Serialize> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub experiment: String,
    pub config: C,
    pub config_hash: String,
    pub payload: P,
}

/// Hex SHA-256 of the config's canonical JSON serialization.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let canonical =
        serde_json::to_vec(config).map_err(|e| Error::Report(format!("config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Write the report JSON to `<out_dir>/<experiment>.json`.
pub fn write_report<C: Serialize, P: Serialize>(
    out_dir: &Path,
    experiment: &str,
    config: &C,
    payload: P,
) -> Result<std::path::PathBuf>
where
    C: Clone,
{
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        experiment: experiment.to_string(),
        config: config.clone(),
        config_hash: config_hash(config)?,
        payload,
    };
    let path = out_dir.join(format!("{experiment}.json"));
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Report(format!("{experiment}: {e}")))?;
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write a flat CSV export to `<out_dir>/<name>.csv`.
pub fn write_csv(
    out_dir: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut body = header.join(",");
    body.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| csv_escape(f)).collect();
        body.push_str(&line.join(","));
        body.push('\n');
    }
    let path = out_dir.join(format!("{name}.csv"));
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}
