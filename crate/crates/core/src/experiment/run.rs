use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cells::{cell_input_hash, enumerate_cells, run_cell, CellKey, CellOutput, CODE_VERSION};
use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::store::{read_json, sha256_hex, write_atomic};
use super::summary::{summarize, write_summary_csv, SummaryRow};
use crate::error::{Error, Result};
use crate::measure::RNG_ALGORITHM;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CELLS_DIR: &str = "cells";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Per-cell artifact. `output_hash` is the SHA-256 of the compact JSON of `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFile {
    pub schema: u32,
    pub key: CellKey,
    pub input_hash: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub output: Option<CellOutput>,
    pub output_hash: Option<String>,
    pub wall_seconds: f64,
}

impl CellFile {
    /// True when the file is a completed result for `input_hash` with an intact payload.
    pub fn is_valid_for(&self, input_hash: &str) -> bool {
        self.schema == SCHEMA_VERSION
            && self.input_hash == input_hash
            && self.status == CellStatus::Ok
            && match (&self.output, &self.output_hash) {
                (Some(o), Some(h)) => serde_json::to_string(o).map(|s| sha256_hex(s.as_bytes()) == *h).unwrap_or(false),
                _ => false,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub total: usize,
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

impl RunOutcome {
    pub fn all_failed(&self) -> bool {
        self.total > 0 && self.failed == self.total
    }
}

/// Worker count from `OTLAB_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("OTLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Hash of the config with the output location blanked out.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output.dir = PathBuf::new();
    c.output.cache_dir = None;
    Ok(sha256_hex(c.to_toml()?.as_bytes()))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

fn execute(cfg: &ExperimentConfig, key: &CellKey, input_hash: &str, path: &Path) -> Result<(CellFile, bool)> {
    if let Ok(existing) = read_json::<CellFile>(path) {
        if existing.is_valid_for(input_hash) {
            return Ok((existing, false));
        }
    }
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| run_cell(cfg, key))).unwrap_or_else(|p| Err(Error::Domain(panic_message(p))));
    let wall_seconds = start.elapsed().as_secs_f64();
    let file = match result {
        Ok(output) => {
            let hash = sha256_hex(serde_json::to_string(&output)?.as_bytes());
            CellFile {
                schema: SCHEMA_VERSION,
                key: key.clone(),
                input_hash: input_hash.to_string(),
                status: CellStatus::Ok,
                error: None,
                output: Some(output),
                output_hash: Some(hash),
                wall_seconds,
            }
        }
        Err(e) => {
            log::warn!("cell {} failed: {e}", key.file_name());
            CellFile {
                schema: SCHEMA_VERSION,
                key: key.clone(),
                input_hash: input_hash.to_string(),
                status: CellStatus::Failed,
                error: Some(e.to_string()),
                output: None,
                output_hash: None,
                wall_seconds,
            }
        }
    };
    write_atomic(path, serde_json::to_string_pretty(&file)?.as_bytes())?;
    Ok((file, true))
}

/// Aggregates the cell files of `cfg` found on disk.
pub fn aggregate(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let dir = cfg.output.dir.join(CELLS_DIR);
    let mut ok = Vec::new();
    for key in enumerate_cells(cfg) {
        if let Ok(f) = read_json::<CellFile>(&dir.join(key.file_name())) {
            if f.is_valid_for(&cell_input_hash(cfg, &key)) {
                ok.push((f.key, f.output.expect("validated")));
            }
        }
    }
    Ok(summarize(&ok))
}

/// Runs every cell of the config, skipping completed ones, then writes
/// the summary CSV, the manifest and the timing log.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = SystemTime::now();
    let dir = cfg.output.dir.clone();
    let cells_dir = dir.join(CELLS_DIR);
    fs::create_dir_all(&cells_dir)?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let keys = enumerate_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    let results: Vec<Result<(CellFile, bool)>> = pool.install(|| {
        keys.par_iter()
            .map(|k| execute(cfg, k, &cell_input_hash(cfg, k), &cells_dir.join(k.file_name())))
            .collect()
    });
    let mut files = Vec::with_capacity(results.len());
    for r in results {
        files.push(r?);
    }
    let rows = aggregate(cfg)?;
    let mut csv = Vec::new();
    write_summary_csv(&rows, &mut csv)?;
    let summary = dir.join(SUMMARY_FILE);
    write_atomic(&summary, &csv)?;
    let manifest = json!({
        "schema": SCHEMA_VERSION,
        "kind": cfg.kind,
        "code_version": CODE_VERSION,
        "config_hash": config_hash(cfg)?,
        "rng_algorithm": RNG_ALGORITHM,
        "summary_sha256": sha256_hex(&csv),
        "timings": TIMINGS_FILE,
        "cells": files.iter().map(|(f, _)| json!({
            "file": format!("{CELLS_DIR}/{}", f.key.file_name()),
            "status": f.status,
            "input_hash": f.input_hash,
            "output_hash": f.output_hash,
            "error": f.error,
        })).collect::<Vec<_>>(),
    });
    let manifest_path = dir.join(MANIFEST_FILE);
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let timings = json!({
        "started_unix": unix(started),
        "finished_unix": unix(SystemTime::now()),
        "cells": files.iter().map(|(f, computed)| json!({
            "file": f.key.file_name(),
            "wall_seconds": f.wall_seconds,
            "computed": computed,
        })).collect::<Vec<_>>(),
    });
    write_atomic(&dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings)?.as_bytes())?;
    let computed = files.iter().filter(|(_, c)| *c).count();
    Ok(RunOutcome {
        dir,
        total: files.len(),
        computed,
        skipped: files.len() - computed,
        failed: files.iter().filter(|(f, _)| f.status == CellStatus::Failed).count(),
        summary,
        manifest: manifest_path,
    })
}
