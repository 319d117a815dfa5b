//! OpenAI-compatible completions backend using first-token logprobs.

use std::time::Duration;

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::header::CONTENT_TYPE;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_backoff, BackendIdentity, DistributionSource, LabelDistribution, LabelModel, ModelOutput, ScoreRequest};
use crate::error::{Error, Result};
use crate::task::{normalize_surface, LabelSet};

/// Gap below the weakest matched label given to labels missing from the top-k list.
pub const FLOOR_GAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: default_backoff(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub top_logprobs: usize,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            top_logprobs: 20,
            retry: RetryPolicy::default(),
            parallelism: 8,
            timeout: Duration::from_secs(60),
        }
    }
}

pub(crate) fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/v1/{path}", base_url.trim_end_matches('/'))
}

pub(crate) fn build_client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Backend(format!("cannot build HTTP client: {e}")))
}

/// POST a JSON body, retrying transport failures, 429 and 5xx with jittered
/// exponential backoff. Other 4xx answers fail immediately as config errors.
pub(crate) fn post_json(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
    retry: &RetryPolicy,
) -> Result<String> {
    let payload = body.to_string();
    let attempts = retry.attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let base = retry.base_delay.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
            let jitter = rand::thread_rng().gen_range(0.0..0.25);
            std::thread::sleep(Duration::from_secs_f64(base * (1.0 + jitter)));
        }
        let mut req = client
            .post(url)
            .header(CONTENT_TYPE, "application/json")
            .body(payload.clone());
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp
                    .text()
                    .map_err(|e| Error::Backend(format!("reading response from {url}: {e}")))?;
                if status.is_success() {
                    return Ok(text);
                }
                if status.is_client_error() && status.as_u16() != 429 {
                    return Err(Error::Config(format!("{url} answered {status}: {text}")));
                }
                last = format!("{url} answered {status}: {text}");
            }
            Err(e) => last = format!("request to {url} failed: {e}"),
        }
        log::warn!("attempt {}/{attempts}: {last}", attempt + 1);
    }
    Err(Error::Backend(format!("giving up after {attempts} attempts: {last}")))
}

/// Per-label scores from first-token logprobs.
///
/// A token counts for a label when its normalized form is a non-empty prefix
/// of the label's normalized verbalizer; tokens matching several labels are
/// ignored. Each label takes its best matching logprob, and labels with no
/// match get `min(matched) - FLOOR_GAP`.
pub fn extract_label_scores(top: &[(String, f64)], labels: &LabelSet) -> std::result::Result<Vec<f64>, String> {
    let verbs: Vec<String> = labels.verbalizers().iter().map(|v| normalize_surface(v)).collect();
    let mut best: Vec<Option<f64>> = vec![None; labels.len()];
    for (token, logprob) in top {
        let t = normalize_surface(token);
        if t.is_empty() || !logprob.is_finite() {
            continue;
        }
        let hits: Vec<usize> = verbs
            .iter()
            .enumerate()
            .filter(|(_, v)| v.starts_with(t.as_str()))
            .map(|(i, _)| i)
            .collect();
        if let [i] = hits[..] {
            best[i] = Some(best[i].map_or(*logprob, |b: f64| b.max(*logprob)));
        }
    }
    let matched: Vec<f64> = best.iter().flatten().copied().collect();
    if matched.is_empty() {
        return Err("no verbalizer matched any top logprob token".into());
    }
    let floor = matched.iter().cloned().fold(f64::INFINITY, f64::min) - FLOOR_GAP;
    Ok(best.into_iter().map(|b| b.unwrap_or(floor)).collect())
}

fn parse_top_logprobs(raw: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| format!("invalid JSON: {e}"))?;
    let top = value
        .pointer("/choices/0/logprobs/top_logprobs/0")
        .and_then(|v| v.as_object())
        .ok_or("response has no choices[0].logprobs.top_logprobs[0]")?;
    Ok(top
        .iter()
        .filter_map(|(tok, lp)| lp.as_f64().map(|lp| (tok.clone(), lp)))
        .collect())
}

pub struct HttpModel {
    config: HttpConfig,
    client: Client,
}

impl HttpModel {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.top_logprobs == 0 {
            return Err(Error::Config("top_logprobs must be positive".into()));
        }
        let client = build_client(config.timeout)?;
        Ok(Self { config, client })
    }

    fn decoding_params(&self) -> serde_json::Value {
        json!({"max_tokens": 1, "logprobs": self.config.top_logprobs, "temperature": 0})
    }
}

impl LabelModel for HttpModel {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            backend: "http".into(),
            model: self.config.model.clone(),
            params: json!({
                "base_url": self.config.base_url,
                "decoding": self.decoding_params(),
            }),
        }
    }

    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> Result<ModelOutput> {
        let body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "max_tokens": 1,
            "logprobs": self.config.top_logprobs,
            "temperature": 0,
        });
        let url = endpoint(&self.config.base_url, "completions");
        let raw = post_json(
            &self.client,
            &url,
            self.config.api_key.as_deref(),
            &body,
            &self.config.retry,
        )?;
        let extraction = parse_top_logprobs(&raw).and_then(|top| extract_label_scores(&top, labels));
        let scores = match extraction {
            Ok(s) => s,
            Err(message) => return Err(Error::Extraction { message, raw }),
        };
        let distribution = LabelDistribution::from_scores(labels, &scores, DistributionSource::Http)?;
        Ok(ModelOutput { distribution, raw })
    }

    fn parallelism(&self) -> usize {
        self.config.parallelism.max(1)
    }
}

impl std::fmt::Debug for HttpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpModel")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish()
    }
}
