//! Deterministic prototype classifier standing in for a language model.
//!
//! Score of label `y` is `bias[y] + alpha * max Jaccard(query, demo)` over
//! demonstrations labeled `y` (zero when there are none), and the
//! distribution is `softmax(score / temperature)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BackendIdentity, DemoView, DistributionSource, LabelDistribution, LabelModel, ModelOutput, ScoreRequest};
use crate::error::{Error, Result};
use crate::task::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Zero-context log-preference per label; missing labels get 0.
    #[serde(default)]
    pub bias: BTreeMap<String, f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_alpha() -> f64 {
    4.0
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            bias: BTreeMap::new(),
            alpha: default_alpha(),
            temperature: default_temperature(),
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be finite and > 0, got {}",
                self.temperature
            )));
        }
        if let Some((label, b)) = self.bias.iter().find(|(_, b)| !b.is_finite()) {
            return Err(Error::Config(format!("bias for '{label}' is not finite: {b}")));
        }
        Ok(())
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index of two token sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn label_scores(params: &SyntheticParams, demos: &[DemoView], query_text: &str, labels: &LabelSet) -> Vec<f64> {
    let query = tokenize(query_text);
    let mut best = vec![0.0f64; labels.len()];
    for demo in demos {
        if let Some(i) = labels.index_of(&demo.label) {
            let j = jaccard(&query, &tokenize(&demo.text));
            if j > best[i] {
                best[i] = j;
            }
        }
    }
    labels
        .labels()
        .iter()
        .zip(best)
        .map(|(label, j)| {
            let bias = params.bias.get(label).copied().unwrap_or(0.0);
            (bias + params.alpha * j) / params.temperature
        })
        .collect()
}

pub fn synthetic_score(
    params: &SyntheticParams,
    demos: &[DemoView],
    query_text: &str,
    labels: &LabelSet,
) -> Result<LabelDistribution> {
    params.validate()?;
    let scores = label_scores(params, demos, query_text, labels);
    LabelDistribution::from_scores(labels, &scores, DistributionSource::Synthetic)
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    params: SyntheticParams,
    parallelism: usize,
}

impl SyntheticModel {
    pub fn new(params: SyntheticParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, parallelism: 8 })
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }
}

impl LabelModel for SyntheticModel {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            backend: "synthetic".into(),
            model: "jaccard-prototype".into(),
            params: serde_json::to_value(&self.params).expect("params serialize"),
        }
    }

    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput> {
        let scores = label_scores(&self.params, &request.demos, &request.query_text, labels);
        let distribution = LabelDistribution::from_scores(labels, &scores, DistributionSource::Synthetic)?;
        let raw = serde_json::to_string(&scores)?;
        Ok(ModelOutput { distribution, raw })
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}
