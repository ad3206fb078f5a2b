//! Output files: CSV tables with a provenance comment line and JSON reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `rows` under a `# kind v1 config_hash=.. master_seed=..` line.
pub fn write_csv(path: &Path, kind: &str, hash: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {kind} v1 config_hash={hash} master_seed={seed}")?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    drop(w);
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn out_dir(flag: Option<PathBuf>, configured: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or(configured).unwrap_or_else(|| PathBuf::from(fallback))
}

pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}
