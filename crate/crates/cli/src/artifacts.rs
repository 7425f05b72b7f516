//! Artifact emission. Every file the toolkit writes embeds the toolkit
//! version and the hash of the exact configuration that produced it:
//! CSV and SVG files carry a leading comment, JSON documents carry
//! top-level metadata keys, and JSON-Lines stores get a `<name>.meta.json`
//! sidecar (comment lines are not valid JSONL).

use crate::config::TOOLKIT_VERSION;
use crate::errors::{Classify, CliError};
use serde::Serialize;
use std::path::Path;
use trp_core::util::{atomic_write, sha256_hex};

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub toolkit_version: String,
    pub config_hash: String,
}

impl Meta {
    pub fn new(config_hash: String) -> Meta {
        Meta {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash,
        }
    }

    /// Meta for a standalone command: the "configuration" is the
    /// command's own effective parameter document.
    pub fn for_params(params: &serde_json::Value) -> Meta {
        let bytes = serde_json::to_vec(params).expect("parameter serialization cannot fail");
        Meta::new(sha256_hex(&[&bytes]))
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# generated-by trp {} config {}",
            self.toolkit_version, self.config_hash
        )
    }
}

/// Render rows as CSV with the provenance comment line on top. Values are
/// quoted by the CSV encoder where needed.
pub fn csv_document(meta: &Meta, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV write");
    for row in rows {
        w.write_record(row).expect("in-memory CSV write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory CSV flush"))
        .expect("CSV output is UTF-8");
    format!("{}\n{}", meta.comment_line(), body)
}

pub fn write_csv(
    path: &Path,
    meta: &Meta,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let doc = csv_document(meta, header, rows);
    atomic_write(path, doc.as_bytes()).or_job(format!("writing {}", path.display()))
}

/// Write a JSON artifact `{toolkit_version, config_hash, <label>: value}`.
pub fn write_json<T: Serialize>(
    path: &Path,
    meta: &Meta,
    label: &str,
    value: &T,
) -> Result<(), CliError> {
    let doc = serde_json::json!({
        "toolkit_version": meta.toolkit_version,
        "config_hash": meta.config_hash,
        label: value,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).or_job("serializing JSON artifact")?;
    bytes.push(b'\n');
    atomic_write(path, &bytes).or_job(format!("writing {}", path.display()))
}

/// Write a JSON-Lines store plus its provenance sidecar.
pub fn write_jsonl<T: Serialize>(path: &Path, meta: &Meta, items: &[T]) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item).or_job("serializing JSONL record")?;
        bytes.push(b'\n');
    }
    atomic_write(path, &bytes).or_job(format!("writing {}", path.display()))?;
    let sidecar = path.with_extension("meta.json");
    write_json(&sidecar, meta, "store", &serde_json::json!({ "records": items.len() }))
}

/// Read a CSV the toolkit wrote (or any CSV using `#` comments): returns
/// (header, rows).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path)
        .or_prereq(format!("reading {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.or_job(format!("parsing {}", path.display()))?;
        let fields: Vec<String> = record.iter().map(String::from).collect();
        if i == 0 {
            header = fields;
        } else {
            rows.push(fields);
        }
    }
    Ok((header, rows))
}

/// Format an accuracy fraction as percent with two decimals.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

/// Format a float compactly but losslessly enough for reports.
pub fn num(x: f64) -> String {
    format!("{x:.6}")
}
