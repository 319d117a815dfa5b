//! Read-through disk cache keyed by a SHA-256 of the canonical request.
//!
//! Layout: `<dir>/<first two hex chars>/<key>.json`, one entry per file,
//! written to a temp file and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendIdentity, DistributionSource, LabelDistribution, LabelModel, ModelOutput, ScoreRequest};
use crate::error::Result;
use crate::task::LabelSet;

/// Everything that determines a provider answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub backend: String,
    pub model: String,
    pub prompt: String,
    pub verbalizers: Vec<String>,
    pub params: serde_json::Value,
}

impl CanonicalRequest {
    pub fn new(identity: &BackendIdentity, prompt: &str, labels: &LabelSet) -> Self {
        Self {
            backend: identity.backend.clone(),
            model: identity.model.clone(),
            prompt: prompt.to_string(),
            verbalizers: labels.verbalizers().to_vec(),
            params: identity.params.clone(),
        }
    }

    pub fn key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("canonical request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CanonicalRequest,
    pub distribution: LabelDistribution,
    pub raw: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

pub struct CachedModel<M> {
    inner: M,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<M: LabelModel> CachedModel<M> {
    pub fn new(inner: M, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            inner,
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    /// Number of requests delegated to the wrapped provider.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Stored entry for `key`; unreadable or inconsistent entries are quarantined.
    pub fn lookup(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let text = fs::read_to_string(&path).ok()?;
        let entry: Option<CacheEntry> = serde_json::from_str(&text).ok();
        match entry {
            Some(e) if e.key == key && e.request.key() == key => Some(e),
            _ => {
                let quarantine = path.with_extension("json.corrupt");
                log::warn!("corrupt cache entry {}; moved to {}", path.display(), quarantine.display());
                let _ = fs::rename(&path, &quarantine);
                None
            }
        }
    }

    pub fn store(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.entry_path(&entry.key);
        let shard = path.parent().expect("entry path has a shard dir");
        fs::create_dir_all(shard)?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .suffix(".part")
            .tempfile_in(shard)?;
        tmp.write_all(serde_json::to_string_pretty(entry)?.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

impl<M: LabelModel> LabelModel for CachedModel<M> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput> {
        let canonical = CanonicalRequest::new(&self.inner.identity(), &request.prompt, labels);
        let key = canonical.key();
        if let Some(entry) = self.lookup(&key) {
            if entry.distribution.labels() == labels.labels() {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(ModelOutput {
                    distribution: entry.distribution.with_source(DistributionSource::Cache),
                    raw: entry.raw,
                });
            }
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.score(request, labels)?;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.store(&CacheEntry {
            key,
            request: canonical,
            distribution: out.distribution.clone(),
            raw: out.raw.clone(),
            created_at,
        })?;
        Ok(out)
    }

    fn parallelism(&self) -> usize {
        self.inner.parallelism()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

fn entry_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for shard in fs::read_dir(dir)? {
        let shard = shard?.path();
        if !shard.is_dir() {
            continue;
        }
        for file in fs::read_dir(&shard)? {
            let file = file?.path();
            if file.extension().and_then(|e| e.to_str()) == Some("json") {
                out.push(file);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Entry count and total bytes; a missing directory counts as empty.
pub fn cache_stats(dir: &Path) -> Result<CacheStats> {
    if !dir.exists() {
        return Ok(CacheStats::default());
    }
    let mut stats = CacheStats::default();
    for f in entry_files(dir)? {
        stats.entries += 1;
        stats.bytes += fs::metadata(&f)?.len();
    }
    Ok(stats)
}

/// Remove every entry and quarantined file; returns the number of entries removed.
pub fn cache_clear(dir: &Path) -> Result<u64> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cache directory {} does not exist", dir.display()),
        )
        .into());
    }
    let removed = entry_files(dir)?.len() as u64;
    for shard in fs::read_dir(dir)? {
        let shard = shard?.path();
        if shard.is_dir() && shard.file_name().is_some_and(|n| n.len() == 2) {
            fs::remove_dir_all(&shard)?;
        }
    }
    Ok(removed)
}
