//! CSV writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use opgame_core::game::TrajectorySample;
use opgame_core::multistage::GroupStat;

use crate::{CliError, Result};

pub const TRAJECTORY_HEADER: [&str; 6] = ["stage", "t", "agent", "issue", "kind", "value"];
pub const SUMMARY_HEADER: [&str; 6] = ["seed", "stage", "group", "issue", "mean", "spread"];

/// Shortest decimal string that parses back to the same `f64`.
pub fn number(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Writes one row per (time, agent, issue, kind); agents and issues are 1-based.
/// Returns the number of data rows.
pub fn write_trajectory(path: &Path, stage: usize, sample: &TrajectorySample) -> Result<usize> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    let stage = stage.to_string();
    let mut rows = 0;
    for (k, &t) in sample.grid.iter().enumerate() {
        let t = number(t);
        for i in 0..sample.agents {
            for l in 0..sample.issues {
                let idx = i * sample.issues + l;
                for (kind, v) in [("x", sample.states[k][idx]), ("u", sample.controls[k][idx])] {
                    w.write_record([
                        stage.as_str(),
                        &t,
                        &(i + 1).to_string(),
                        &(l + 1).to_string(),
                        kind,
                        &number(v),
                    ])?;
                    rows += 1;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(rows)
}

/// Issues are written 1-based.
pub fn write_summary(path: &Path, rows: &[(u64, GroupStat)]) -> Result<usize> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for (seed, r) in rows {
        w.write_record([
            seed.to_string(),
            r.stage.to_string(),
            r.group.clone(),
            (r.issue + 1).to_string(),
            number(r.mean),
            number(r.spread),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(rows.len())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    /// Data rows, header excluded.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the config text (or of the resolved preset).
    pub config_digest: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub started: String,
    pub finished: String,
    #[serde(default)]
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub failures: Vec<SeedFailure>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, started: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_digest,
            seeds: Vec::new(),
            started,
            finished: String::new(),
            files: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn record(&mut self, out: &Path, path: &Path, rows: usize) {
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            rows,
        });
    }

    /// Stamps the finish time and writes `manifest.toml` into `out`.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        self.finished = timestamp();
        let path = out.join("manifest.toml");
        let text = toml::to_string(&self).expect("manifest serializes");
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
