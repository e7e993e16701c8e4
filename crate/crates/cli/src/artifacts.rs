//! Run manifests and CSV artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use impulse_qvi::qvi::{QviSolution, ResidualReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

pub const VALUE_FIELD_HEADER: [&str; 6] = ["x", "u", "Mu", "region", "xi_star", "Au_minus_f"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    /// Full config, so the run can be repeated from the manifest alone.
    pub config: String,
    pub seed: u64,
    pub eps: Vec<f64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Output name to file path, relative to the manifest.
    pub outputs: BTreeMap<String, String>,
    /// `pass`, `fail` or `ok`.
    pub verdict: String,
    pub summary: Value,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

pub fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

/// 17 significant digits.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_failure(path, e))?;
    w.write_record(header).map_err(|e| io_failure(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

pub fn write_value_field(path: &Path, sol: &QviSolution, res: &ResidualReport) -> Result<(), Failure> {
    let grid = sol.u.grid;
    let rows = (0..grid.n).map(|i| {
        let action = sol.policy.action[i];
        vec![
            fmt(grid.x(i)),
            fmt(sol.u.values[i]),
            fmt(sol.intervention.mu.values[i]),
            if action { "A" } else { "C" }.to_string(),
            fmt(if action { sol.policy.xi_star[i] } else { 0.0 }),
            fmt(res.au_minus_f[i]),
        ]
    });
    write_csv(path, &VALUE_FIELD_HEADER, rows)
}

/// Numeric table with a fixed header; non-numeric cells other than the
/// `region` column are errors.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path, expected: &[&str]) -> Result<Self, Failure> {
        let mut r = csv::Reader::from_path(path).map_err(|e| io_failure(path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| io_failure(path, e))?.iter().map(String::from).collect();
        if header != expected {
            return Err(Failure::input(format!("{}: expected columns {expected:?}, found {header:?}", path.display())));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| io_failure(path, e))?;
            rows.push(rec.iter().map(String::from).collect());
        }
        if rows.is_empty() {
            return Err(Failure::input(format!("{}: no rows", path.display())));
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn numbers(&self, name: &str, path: &Path) -> Result<Vec<f64>, Failure> {
        let c = self.column(name).ok_or_else(|| Failure::input(format!("{}: no column {name}", path.display())))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let cell = row[c].trim();
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse::<f64>()
                    .map_err(|_| Failure::input(format!("{}: row {}: {name} = {cell:?} is not a number", path.display(), k + 1)))
            })
            .collect()
    }
}

/// `<command>.manifest.json`
pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

/// Reads a manifest; a directory resolves to its solve manifest.
pub fn read_manifest(path: &Path) -> Result<(RunManifest, PathBuf), Failure> {
    let file = if path.is_dir() { path.join(manifest_name("solve")) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| io_failure(&file, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| io_failure(&file, e))?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}
