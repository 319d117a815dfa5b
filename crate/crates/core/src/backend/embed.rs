//! Text embeddings for the retrieval baselines.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::http::{build_client, endpoint, post_json, RetryPolicy};
use crate::error::{Error, Result};
use crate::task::DatasetRole;

/// Dimension of the feature-hashing embedder.
pub const HASHING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Lookup("embedding has no entries or a non-finite entry".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::Lookup("embedding is the zero vector".into()));
        }
        Ok(Self {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine distance `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let cos = dot / (a.norm() * b.norm());
    (1.0 - cos).clamp(0.0, 2.0)
}

/// What to embed. File-backed providers look items up by role and id; the
/// others embed `text`.
#[derive(Debug, Clone)]
pub struct EmbedRequest<'a> {
    pub role: DatasetRole,
    pub id: usize,
    pub text: &'a str,
}

pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> String;
    fn embed(&self, request: &EmbedRequest<'_>) -> Result<EmbeddingVector>;
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone, Default)]
pub struct HashingEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    /// Bucket index and sign of one token.
    pub fn bucket(token: &str) -> (usize, f64) {
        let h = fnv1a(token.as_bytes());
        let index = (h % HASHING_DIM as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        (index, sign)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut values = vec![0.0; HASHING_DIM];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let (i, sign) = Self::bucket(&token.to_lowercase());
            values[i] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Lookup(format!("text {text:?} hashes to the zero vector")));
        }
        for v in &mut values {
            *v /= norm;
        }
        EmbeddingVector::new(values, self.provider_id())
    }
}

impl Embedder for HashingEmbedder {
    fn provider_id(&self) -> String {
        format!("hashing-{HASHING_DIM}")
    }

    fn embed(&self, request: &EmbedRequest<'_>) -> Result<EmbeddingVector> {
        if request.text.is_empty() {
            return Err(Error::Lookup("cannot embed empty text".into()));
        }
        self.embed_text(request.text)
    }
}

#[derive(Deserialize)]
struct SidecarRecord {
    id: usize,
    vector: Vec<f64>,
    #[serde(default)]
    role: Option<DatasetRole>,
}

/// Precomputed vectors from a JSONL sidecar of `{"id", "vector"}` records.
///
/// Records without a `role` belong to the train pool.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    path: PathBuf,
    vectors: HashMap<(DatasetRole, usize), Vec<f64>>,
}

impl FileEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SidecarRecord = serde_json::from_str(line)
                .map_err(|e| Error::ingest(path, format!("line {}: {e}", i + 1)))?;
            if *dim.get_or_insert(rec.vector.len()) != rec.vector.len() {
                return Err(Error::ingest(path, format!("line {}: vector length differs", i + 1)));
            }
            vectors.insert((rec.role.unwrap_or(DatasetRole::TrainPool), rec.id), rec.vector);
        }
        Ok(Self {
            path: path.to_path_buf(),
            vectors,
        })
    }
}

impl Embedder for FileEmbedder {
    fn provider_id(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn embed(&self, request: &EmbedRequest<'_>) -> Result<EmbeddingVector> {
        let v = self.vectors.get(&(request.role, request.id)).ok_or_else(|| {
            Error::Lookup(format!(
                "{} has no vector for {} id {}",
                self.path.display(),
                request.role,
                request.id
            ))
        })?;
        EmbeddingVector::new(v.clone(), self.provider_id())
    }
}

/// OpenAI-compatible `POST /v1/embeddings`.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        Ok(Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            client: build_client(std::time::Duration::from_secs(60))?,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl Embedder for HttpEmbedder {
    fn provider_id(&self) -> String {
        format!("http:{}:{}", self.base_url, self.model)
    }

    fn embed(&self, request: &EmbedRequest<'_>) -> Result<EmbeddingVector> {
        if request.text.is_empty() {
            return Err(Error::Lookup("cannot embed empty text".into()));
        }
        let body = json!({"model": self.model, "input": request.text});
        let raw = post_json(
            &self.client,
            &endpoint(&self.base_url, "embeddings"),
            self.api_key.as_deref(),
            &body,
            &self.retry,
        )?;
        let value: serde_json::Value = serde_json::from_str(&raw)?;
        let values: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Extraction {
                message: "response has no data[0].embedding".into(),
                raw: raw.clone(),
            })?
            .iter()
            .filter_map(|x| x.as_f64())
            .collect();
        EmbeddingVector::new(values, self.provider_id())
    }
}

/// Parse an embedder spec: `hashing`, `file:<path>`, or `http`.
pub fn parse_embedder(
    spec: &str,
    base_url: Option<&str>,
    model: Option<&str>,
    api_key: Option<String>,
) -> Result<Box<dyn Embedder>> {
    match spec {
        "hashing" => Ok(Box::new(HashingEmbedder)),
        "http" => {
            let base = base_url.ok_or_else(|| Error::Config("http embeddings need a base URL".into()))?;
            let model = model.ok_or_else(|| Error::Config("http embeddings need a model name".into()))?;
            Ok(Box::new(HttpEmbedder::new(base, model, api_key)?))
        }
        s if s.starts_with("file:") => Ok(Box::new(FileEmbedder::load(Path::new(&s["file:".len()..]))?)),
        other => Err(Error::Config(format!(
            "unknown embedding provider '{other}' (expected hashing, http, or file:<path>)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(text: &str) -> EmbedRequest<'_> {
        EmbedRequest {
            role: DatasetRole::TrainPool,
            id: 0,
            text,
        }
    }

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder;
        let a = e.embed(&req("the quick brown fox")).unwrap();
        let b = e.embed(&req("the quick brown fox")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), HASHING_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!(cosine_distance(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let e = HashingEmbedder;
        let (ia, _) = HashingEmbedder::bucket("apple");
        let (ib, _) = HashingEmbedder::bucket("zebra");
        assert_ne!(ia, ib);
        let a = e.embed(&req("apple")).unwrap();
        let b = e.embed(&req("zebra")).unwrap();
        assert!((cosine_distance(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_sidecar_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(
            &path,
            "{\"id\":7,\"vector\":[0.5,-1.25,3.0]}\n{\"id\":7,\"role\":\"test\",\"vector\":[1,0,0]}\n",
        )
        .unwrap();
        let e = FileEmbedder::load(&path).unwrap();
        let v = e
            .embed(&EmbedRequest { role: DatasetRole::TrainPool, id: 7, text: "ignored" })
            .unwrap();
        assert_eq!(v.values, vec![0.5, -1.25, 3.0]);
        let t = e.embed(&EmbedRequest { role: DatasetRole::Test, id: 7, text: "" }).unwrap();
        assert_eq!(t.values, vec![1.0, 0.0, 0.0]);
        let err = e
            .embed(&EmbedRequest { role: DatasetRole::TrainPool, id: 8, text: "" })
            .unwrap_err();
        assert!(matches!(err, Error::Lookup(_)));
    }

    #[test]
    fn parse_specs() {
        assert!(parse_embedder("hashing", None, None, None).is_ok());
        assert!(parse_embedder("http", None, None, None).is_err());
        assert!(parse_embedder("bogus", None, None, None).is_err());
        assert!(parse_embedder("file:/definitely/missing.jsonl", None, None, None).is_err());
    }

    proptest! {
        #[test]
        fn distance_in_range(a in "[a-z]{1,6}( [a-z]{1,6}){0,5}", b in "[a-z]{1,6}( [a-z]{1,6}){0,5}") {
            let e = HashingEmbedder;
            let va = e.embed(&req(&a));
            let vb = e.embed(&req(&b));
            if let (Ok(va), Ok(vb)) = (va, vb) {
                let d = cosine_distance(&va, &vb);
                prop_assert!((0.0..=2.0).contains(&d));
                prop_assert!((va.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
