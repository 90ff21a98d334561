//! CSV output with a JSON sidecar of config and summary statistics.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

pub const BUILD_ID: &str = env!("BUILD_DESCRIBE");

/// A rectangular result table. Every experiment row carries seed,
/// replication, and build id columns so output files are self-describing.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        let mut cols = vec![
            "seed".to_string(),
            "replication".to_string(),
            "build_id".to_string(),
        ];
        cols.extend(columns.iter().map(|c| c.to_string()));
        Self {
            columns: cols,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, seed: u64, replication: usize, values: &[String]) {
        assert_eq!(values.len() + 3, self.columns.len(), "row width mismatch");
        let mut row = vec![
            seed.to_string(),
            replication.to_string(),
            BUILD_ID.to_string(),
        ];
        row.extend_from_slice(values);
        self.rows.push(row);
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Sidecar path: `results.csv` -> `results.summary.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "results".into());
    out.with_file_name(format!("{stem}.summary.json"))
}

pub fn write_outputs(out: &Path, table: &Table, config: Value, summary: Value) -> Result<()> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {dir:?}"))?;
        }
    }
    let mut writer = csv::Writer::from_path(out).with_context(|| format!("opening {out:?}"))?;
    writer.write_record(&table.columns)?;
    for row in &table.rows {
        writer.write_record(row)?;
    }
    writer.flush()?;

    let meta = serde_json::json!({
        "build_id": BUILD_ID,
        "config": config,
        "summary": summary,
    });
    let side = sidecar_path(out);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?)
        .with_context(|| format!("writing {side:?}"))?;
    Ok(())
}
