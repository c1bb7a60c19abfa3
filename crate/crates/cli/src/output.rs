//! Report and CSV files. Everything is rendered in memory first; files are
//! written only afterwards and removed again if any write fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{Config, SCHEMA_VERSION};
use crate::pipeline::{Failure, Output};

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    command: &'a str,
    name: &'a str,
    /// seconds since the Unix epoch; excluded from reproducibility comparisons
    generated_at: u64,
    config: &'a Config,
    results: &'a toml::Table,
}

/// Path of the first NaN found, if any.
fn find_nan(v: &toml::Value, path: &str) -> Option<String> {
    match v {
        toml::Value::Float(x) if x.is_nan() => Some(path.to_string()),
        toml::Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| find_nan(x, &format!("{path}[{i}]"))),
        toml::Value::Table(t) => t.iter().find_map(|(k, x)| find_nan(x, &format!("{path}.{k}"))),
        _ => None,
    }
}

fn render_report(command: &str, cfg: &Config, out: &Output) -> Result<String, Failure> {
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let report = Report { schema_version: SCHEMA_VERSION, command, name: &cfg.name, generated_at, config: cfg, results: &out.results };
    let value = toml::Value::try_from(&report).map_err(|e| Failure::Internal(format!("cannot serialize report: {e}")))?;
    if let Some(path) = find_nan(&value, "report") {
        return Err(Failure::Internal(format!("report value {path} is NaN")));
    }
    toml::to_string(&value).map_err(|e| Failure::Internal(format!("cannot render report: {e}")))
}

fn csv_text(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Internal(format!("cannot render csv: {e}"));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Internal(format!("cannot render csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Failure::Internal(e.to_string()))
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn render_files(command: &str, cfg: &Config, out: &Output) -> Result<Vec<(&'static str, String)>, Failure> {
    let mut files = vec![("report.toml", render_report(command, cfg, out)?)];
    if let Some(atoms) = &out.atoms {
        let mut header = vec!["plate".to_string()];
        header.extend((1..=out.dim).map(|i| format!("x{i}")));
        header.extend(["weight".to_string(), "cap".to_string()]);
        let rows = atoms.iter().map(|a| {
            let mut r = vec![a.plate.to_string()];
            r.extend(a.position.iter().map(|&x| num(x)));
            r.push(num(a.weight));
            r.push(num(a.cap));
            r
        });
        files.push(("atoms.csv", csv_text(header, rows)?));
    }
    if let Some(trace) = &out.trace {
        let header = ["iter", "objective", "step", "kkt_residual"].map(String::from).to_vec();
        let rows = trace.iter().map(|t| vec![t.iter.to_string(), num(t.objective), num(t.step), num(t.kkt_residual)]);
        files.push(("trace.csv", csv_text(header, rows)?));
    }
    Ok(files)
}

fn cleanup(written: &[PathBuf], created_dir: Option<&Path>) {
    for p in written {
        let _ = fs::remove_file(p);
    }
    if let Some(d) = created_dir {
        let _ = fs::remove_dir(d);
    }
}

pub fn write(command: &str, cfg: &Config, out: &Output) -> Result<(), Failure> {
    let files = render_files(command, cfg, out)?;
    let dir = &cfg.output.dir;
    let created = if dir.exists() {
        None
    } else {
        fs::create_dir_all(dir).map_err(|e| Failure::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Some(dir.as_path())
    };
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, text) {
            written.push(path.clone());
            cleanup(&written, created);
            return Err(Failure::Internal(format!("cannot write {}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(())
}
