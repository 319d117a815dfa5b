//! Run manifests and atomic output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::backend::BackendIdentity;
use crate::error::Result;

/// Everything needed to repeat a run against a warm cache.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub backend: Option<BackendIdentity>,
    pub base_url: Option<String>,
    /// Input file path to SHA-256 of its bytes.
    pub datasets: BTreeMap<String, String>,
    /// Output file path to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub artifact_hash: Option<String>,
    pub metrics: Option<serde_json::Value>,
    pub skipped_ids: Vec<usize>,
    pub provider_calls: Option<u64>,
    pub cache_hits: Option<u64>,
    pub started_at: u64,
    pub duration_ms: u64,
}

impl RunManifest {
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.datasets.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Write `bytes` to `path` atomically and record its hash.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").suffix(".part").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
