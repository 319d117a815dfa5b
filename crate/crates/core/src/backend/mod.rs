//! Model backends: anything that maps a rendered prompt to per-label probabilities.
//!
//! Backends are trait objects registered by name in a [`BackendRegistry`] so
//! the CLI can pick one at runtime. [`CachedModel`] wraps any backend with a
//! content-addressed disk cache.

mod cache;
mod embed;
mod http;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Example, Fields, LabelSet, TaskSpec};

pub use cache::{cache_clear, cache_stats, CacheEntry, CacheStats, CachedModel, CanonicalRequest};
pub use embed::{
    cosine_distance, parse_embedder, EmbedRequest, Embedder, EmbeddingVector, FileEmbedder, HashingEmbedder,
    HttpEmbedder, HASHING_DIM,
};
pub use http::{extract_label_scores, HttpConfig, HttpModel, RetryPolicy};
pub use synthetic::{jaccard, synthetic_score, tokenize, SyntheticModel, SyntheticParams};

/// Tolerance on the unit-sum invariant of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionSource {
    Http,
    Synthetic,
    Cache,
}

/// Probability per task label for one query under one context.
///
/// Every label of the task is present, every probability is positive, and
/// they sum to one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
    pub source: DistributionSource,
}

impl LabelDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>, source: DistributionSource) -> Result<Self> {
        if labels.len() != probs.len() || labels.len() < 2 {
            return Err(Error::Distribution(format!(
                "{} labels but {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Distribution(format!("probability {p} is not positive")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Distribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { labels, probs, source })
    }

    /// Softmax of per-label scores, in label-set order.
    pub fn from_scores(label_set: &LabelSet, scores: &[f64], source: DistributionSource) -> Result<Self> {
        if scores.len() != label_set.len() {
            return Err(Error::Distribution(format!(
                "{} scores for {} labels",
                scores.len(),
                label_set.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Distribution("non-finite label score".into()));
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / total).collect();
        Self::new(label_set.labels().to_vec(), probs, source)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.labels.iter().map(String::as_str).zip(self.probs.iter().copied())
    }

    /// Most probable label; exact ties go to the earliest label.
    pub fn argmax(&self) -> &str {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        &self.labels[best]
    }

    /// Labels by descending probability, ties in label order.
    pub fn ranked_labels(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.labels.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.labels[i].as_str()).collect()
    }

    pub fn with_source(mut self, source: DistributionSource) -> Self {
        self.source = source;
        self
    }
}

/// A demonstration as the model sees it: plain input text and label id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoView {
    pub text: String,
    pub label: String,
}

/// Everything a backend may need to score one query.
///
/// HTTP backends only read `prompt`; the synthetic model reads the
/// structured demos and query text.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub prompt: String,
    pub demos: Vec<DemoView>,
    pub query_text: String,
}

impl ScoreRequest {
    pub fn build(task: &TaskSpec, demos: &[Example], query: &Fields) -> Result<Self> {
        let prompt = task.render_prompt(demos, query)?;
        Ok(Self {
            prompt,
            demos: demos
                .iter()
                .map(|d| DemoView {
                    text: task.input_text(&d.fields),
                    label: d.label.clone(),
                })
                .collect(),
            query_text: task.input_text(query),
        })
    }
}

/// Stable description of a backend, used in cache keys and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub backend: String,
    pub model: String,
    /// Decoding or model parameters that change the output.
    pub params: serde_json::Value,
}

/// A scored response: the label distribution plus the provider's raw answer.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub distribution: LabelDistribution,
    pub raw: String,
}

/// A source of label probabilities. Implementations must be safe to call concurrently.
pub trait LabelModel: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput>;

    /// Suggested bound on concurrent calls.
    fn parallelism(&self) -> usize {
        1
    }
}

impl<T: LabelModel + ?Sized> LabelModel for Arc<T> {
    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput> {
        (**self).score(request, labels)
    }
    fn parallelism(&self) -> usize {
        (**self).parallelism()
    }
}

impl<T: LabelModel + ?Sized> LabelModel for Box<T> {
    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput> {
        (**self).score(request, labels)
    }
    fn parallelism(&self) -> usize {
        (**self).parallelism()
    }
}

/// Label distribution for a rendered request, renormalized over the task labels.
pub fn label_distribution(
    model: &dyn LabelModel,
    request: &ScoreRequest,
    labels: &LabelSet,
) -> Result<LabelDistribution> {
    if request.prompt.is_empty() {
        return Err(Error::Config("empty prompt".into()));
    }
    let out = model.score(request, labels)?;
    if out.distribution.labels() != labels.labels() {
        return Err(Error::Distribution(
            "backend returned labels that differ from the task's".into(),
        ));
    }
    Ok(out.distribution)
}

/// Options a backend factory may read.
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub synthetic: Option<SyntheticParams>,
    pub parallelism: Option<usize>,
    pub top_logprobs: Option<usize>,
    pub retry: Option<RetryPolicy>,
}

pub type BackendFactory = fn(&BackendOptions) -> Result<Box<dyn LabelModel>>;

/// Backends selectable by name.
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("synthetic", |opts| {
            let params = opts.synthetic.clone().unwrap_or_default();
            let mut model = SyntheticModel::new(params)?;
            if let Some(p) = opts.parallelism {
                model = model.with_parallelism(p);
            }
            Ok(Box::new(model))
        });
        reg.register("http", |opts| {
            let mut config = HttpConfig::new(
                opts.base_url
                    .clone()
                    .ok_or_else(|| Error::Config("http backend needs a base URL".into()))?,
                opts.model
                    .clone()
                    .ok_or_else(|| Error::Config("http backend needs a model name".into()))?,
            );
            config.api_key = opts.api_key.clone();
            if let Some(k) = opts.top_logprobs {
                config.top_logprobs = k;
            }
            if let Some(p) = opts.parallelism {
                config.parallelism = p;
            }
            if let Some(r) = &opts.retry {
                config.retry = r.clone();
            }
            Ok(Box::new(HttpModel::new(config)?))
        });
        reg
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, opts: &BackendOptions) -> Result<Box<dyn LabelModel>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown backend '{name}' (known: {})",
                self.names().join(", ")
            ))
        })?;
        factory(opts)
    }
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

pub(crate) fn default_backoff() -> Duration {
    Duration::from_secs(1)
}
