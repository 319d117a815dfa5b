//! Fixture loading and brute-force oracles written without the library's
//! scoring, ranking, or sampling code.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use icr_core::backend::{BackendIdentity, LabelModel, ModelOutput, ScoreRequest, SyntheticParams};
use icr_core::task::{DataFormat, Dataset, DatasetRole, LabelSet, TaskSpec};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(task_file: &str, data_file: &str, role: DatasetRole) -> (TaskSpec, Dataset) {
    let task = TaskSpec::load(&fixture(task_file)).unwrap();
    let data = task.load_dataset(&fixture(data_file), DataFormat::Jsonl, role).unwrap();
    (task, data)
}

pub fn toy() -> (TaskSpec, Dataset, Dataset) {
    let (task, pool) = load("toy_task.toml", "toy_pool.jsonl", DatasetRole::TrainPool);
    let (_, test) = load("toy_task.toml", "toy_test.jsonl", DatasetRole::Test);
    (task, pool, test)
}

pub fn imbalanced() -> (TaskSpec, Dataset, Dataset, SyntheticParams) {
    let (task, pool) = load("imbalanced_task.toml", "imbalanced_pool.jsonl", DatasetRole::TrainPool);
    let (_, test) = load("imbalanced_task.toml", "imbalanced_test.jsonl", DatasetRole::Test);
    let params: SyntheticParams =
        serde_json::from_str(&std::fs::read_to_string(fixture("imbalanced_synthetic.json")).unwrap()).unwrap();
    (task, pool, test, params)
}

// ---- synthetic model oracle ----

/// One oracle example: id, input text, label index.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: usize,
    pub text: String,
    pub label: usize,
}

pub fn rows(task: &TaskSpec, data: &Dataset) -> Vec<Row> {
    data.examples()
        .iter()
        .map(|e| Row {
            id: e.id,
            text: task.fields().iter().map(|f| e.fields[f].as_str()).collect::<Vec<_>>().join(" "),
            label: task.label_set.labels().iter().position(|l| *l == e.label).unwrap(),
        })
        .collect()
}

fn words(s: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn overlap(a: &str, b: &str) -> f64 {
    let (a, b) = (words(a), words(b));
    let inter = a.iter().filter(|w| b.contains(*w)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub struct Oracle {
    pub bias: Vec<f64>,
    pub alpha: f64,
    pub temperature: f64,
}

impl Oracle {
    pub fn new(labels: &LabelSet, params: &SyntheticParams) -> Self {
        Self {
            bias: labels.labels().iter().map(|l| params.bias.get(l).copied().unwrap_or(0.0)).collect(),
            alpha: params.alpha,
            temperature: params.temperature,
        }
    }

    pub fn probs(&self, demos: &[Row], query: &str) -> Vec<f64> {
        let scores: Vec<f64> = (0..self.bias.len())
            .map(|y| {
                let best = demos
                    .iter()
                    .filter(|d| d.label == y)
                    .map(|d| overlap(query, &d.text))
                    .fold(0.0, f64::max);
                (self.bias[y] + self.alpha * best) / self.temperature
            })
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    /// First label wins exact ties.
    pub fn predict(&self, demos: &[Row], query: &str) -> usize {
        let p = self.probs(demos, query);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, demos: &[Row], test: &[Row]) -> f64 {
        test.iter().filter(|t| self.predict(demos, &t.text) == t.label).count() as f64 / test.len() as f64
    }

    /// Ratio form of misconfidence: best wrong probability over gold probability.
    pub fn psi_ratio(&self, demos: &[Row], cand: &Row) -> f64 {
        let p = self.probs(demos, &cand.text);
        let wrong = p
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != cand.label)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        wrong / p[cand.label]
    }
}

// ---- sampling oracle (reproduces the seeded draw order) ----

pub fn init_uniform(pool: &[Row], m: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Row> = index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i].clone()).collect();
    picked.shuffle(&mut rng);
    picked
}

/// Label quotas by largest remainder computed in floating point.
pub fn quotas(counts: &[usize], size: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let exact: Vec<f64> = counts.iter().map(|c| size as f64 * *c as f64 / total as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = size - q.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|a, b| {
        let (ra, rb) = (exact[*a] - exact[*a].floor(), exact[*b] - exact[*b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

pub fn uniform_baseline(pool: &[Row], n_labels: usize, m: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<&Row>> = (0..n_labels).map(|y| pool.iter().filter(|r| r.label == y).collect()).collect();
    let q = quotas(&groups.iter().map(Vec::len).collect::<Vec<_>>(), m);
    let mut out = Vec::new();
    for (g, take) in groups.iter().zip(q) {
        for i in index::sample(&mut rng, g.len(), take).into_iter() {
            out.push(g[i].clone());
        }
    }
    out.shuffle(&mut rng);
    out
}

/// One reflection step by hand: rank remaining candidates by ratio
/// (descending, ties by id) and put the top `n` in front of the last `m - n`.
pub fn icr_one_step(oracle: &Oracle, pool: &[Row], m: usize, n: usize, seed: u64) -> Vec<usize> {
    let p0 = init_uniform(pool, m, seed);
    let in_prompt: HashSet<usize> = p0.iter().map(|r| r.id).collect();
    let mut cands: Vec<(f64, usize)> = pool
        .iter()
        .filter(|r| !in_prompt.contains(&r.id))
        .map(|r| (oracle.psi_ratio(&p0, r), r.id))
        .collect();
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut ids: Vec<usize> = cands[..n].iter().map(|c| c.1).collect();
    ids.extend(p0[n..].iter().map(|r| r.id));
    ids
}

pub fn rows_by_id(pool: &[Row], ids: &[usize]) -> Vec<Row> {
    let map: BTreeMap<usize, &Row> = pool.iter().map(|r| (r.id, r)).collect();
    ids.iter().map(|i| map[i].clone()).collect()
}

// ---- instrumentation ----

/// Counts calls reaching the wrapped model.
pub struct Counting<M> {
    pub inner: M,
    pub calls: Arc<AtomicUsize>,
}

impl<M: LabelModel> Counting<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }
}

impl<M: LabelModel> LabelModel for Counting<M> {
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn score(&self, request: &ScoreRequest, labels: &LabelSet) -> icr_core::Result<ModelOutput> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(request, labels)
    }

    fn parallelism(&self) -> usize {
        self.inner.parallelism()
    }
}

// ---- HTTP mock ----

/// A local completions endpoint whose top logprobs depend only on the prompt.
pub struct MockServer {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn mock_logprobs(prompt: &str, verbalizers: &[&str]) -> serde_json::Value {
    let h = fnv(prompt);
    let mut top = serde_json::Map::new();
    for (i, v) in verbalizers.iter().enumerate() {
        let lp = -(((h >> (i * 10)) % 1000) as f64) / 400.0 - 0.01;
        top.insert(format!(" {v}"), serde_json::json!(lp));
    }
    top.insert(" the".into(), serde_json::json!(-4.0));
    serde_json::json!({
        "id": "cmpl-mock",
        "object": "text_completion",
        "choices": [{"index": 0, "text": " x", "logprobs": {"tokens": [" x"], "top_logprobs": [top]}}]
    })
}

impl MockServer {
    pub fn start(verbalizers: Vec<String>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let counter = counter.clone();
                let verbalizers = verbalizers.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    counter.fetch_add(1, Ordering::SeqCst);
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let prompt = req["prompt"].as_str().unwrap_or_default();
                    let refs: Vec<&str> = verbalizers.iter().map(String::as_str).collect();
                    let out = mock_logprobs(prompt, &refs).to_string();
                    let mut stream = stream;
                    let _ = write!(
                        stream,
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        out.len(),
                        out
                    );
                });
            }
        });
        Self { base_url, requests }
    }
}
