//! Comparison methods: stratified uniform sampling, best-of-n on a validation
//! set, and the two per-query retrieval methods (nearest neighbours, and
//! nearest neighbours restricted to the zero-shot top-two labels).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::artifact::Sealed;
use crate::backend::{cosine_distance, label_distribution, EmbedRequest, Embedder, EmbeddingVector, LabelModel, ScoreRequest};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metric, PromptSource};
use crate::parallel::par_map;
use crate::sampling::{rng, stratified_draw, stratified_subsample};
use crate::task::{Dataset, DatasetRole, DemonstrationSet, Example, Provenance, TaskSpec};

/// `m` demonstrations with label-proportional counts, shuffled by `seed`.
pub fn uniform_select(task: &TaskSpec, pool: &Dataset, m: usize, seed: u64) -> Result<DemonstrationSet> {
    let mut rng = rng(seed);
    let mut members = stratified_draw(pool.examples(), &task.label_set, m, &mut rng)?;
    members.shuffle(&mut rng);
    DemonstrationSet::new(
        members,
        task.name.clone(),
        Provenance {
            method: "uniform".into(),
            seed,
            iterations: 0,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfConfig {
    pub trials: usize,
    /// Validation cases used for scoring; larger validation sets are subsampled.
    pub validation_size: Option<usize>,
    pub metric: Metric,
    #[serde(default)]
    pub skip_failures: bool,
}

impl Default for BestOfConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            validation_size: Some(100),
            metric: Metric::Accuracy,
            skip_failures: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BestOfOutcome {
    pub demos: DemonstrationSet,
    pub best_trial: usize,
    /// Validation score of every trial, in trial order.
    pub trial_scores: Vec<f64>,
}

/// Draw `trials` uniform prompts with seeds `seed + t` and keep the best on validation.
/// Ties go to the lowest trial index.
pub fn best_of_n_select(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    m: usize,
    validation: &Dataset,
    seed: u64,
    config: &BestOfConfig,
) -> Result<BestOfOutcome> {
    if config.trials == 0 {
        return Err(Error::Config("best-of-n needs at least one trial".into()));
    }
    let validation = match config.validation_size {
        Some(size) if validation.len() > size => stratified_subsample(validation, &task.label_set, size, seed)?,
        _ => validation.clone(),
    };
    let mut best: Option<(usize, f64, DemonstrationSet)> = None;
    let mut trial_scores = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let trial_seed = seed.wrapping_add(t as u64);
        let demos = uniform_select(task, pool, m, trial_seed)?;
        let report = evaluate(
            model,
            task,
            &PromptSource::Fixed(demos.clone()),
            &validation,
            config.skip_failures,
        )
        .map_err(|e| Error::Trial {
            trial: t,
            source: Box::new(e),
        })?;
        let score = config.metric.of(&report);
        trial_scores.push(score);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((t, score, demos));
        }
    }
    let (best_trial, _, mut demos) = best.expect("at least one trial");
    demos.provenance.method = "best-of-n".into();
    demos.provenance.seed = seed;
    Ok(BestOfOutcome {
        demos,
        best_trial,
        trial_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMethod {
    Kate,
    Ambig,
}

/// Position of the nearest neighbour inside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemoOrder {
    /// Closest example sits right before the query.
    #[default]
    NearestLast,
    NearestFirst,
}

/// A per-query selection rule, stored in place of a fixed prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub kind: String,
    pub task: String,
    pub label_set_hash: String,
    pub method: RetrievalMethod,
    pub k: usize,
    /// Embedding provider spec (`hashing`, `http`, or `file:<path>`).
    pub embeddings: String,
    #[serde(default)]
    pub order: DemoOrder,
    pub pool: Dataset,
    #[serde(default)]
    pub content_hash: String,
}

impl RetrievalPlan {
    pub fn new(
        task: &TaskSpec,
        method: RetrievalMethod,
        k: usize,
        embeddings: impl Into<String>,
        order: DemoOrder,
        pool: Dataset,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("retrieval k must be at least 1".into()));
        }
        if k > pool.len() {
            return Err(Error::Config(format!(
                "retrieval k = {k} exceeds the pool size {}",
                pool.len()
            )));
        }
        let mut plan = Self {
            kind: "retrieval-plan".into(),
            task: task.name.clone(),
            label_set_hash: task.label_set.content_hash(),
            method,
            k,
            embeddings: embeddings.into(),
            order,
            pool,
            content_hash: String::new(),
        };
        plan.seal()?;
        Ok(plan)
    }
}

impl Sealed for RetrievalPlan {
    fn hash_slot(&mut self) -> &mut String {
        &mut self.content_hash
    }
}

/// A plan bound to an embedder, with pool embeddings computed up front.
pub struct Retriever {
    plan: RetrievalPlan,
    embedder: Box<dyn Embedder>,
    pool_vectors: Vec<EmbeddingVector>,
}

/// Retrieved demonstrations and how many came from outside the label filter.
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub demos: DemonstrationSet,
    pub backfilled: usize,
}

impl Retriever {
    /// Bind `plan` to `embedder`, embedding every pool example's input text.
    pub fn new(plan: RetrievalPlan, embedder: Box<dyn Embedder>, task: &TaskSpec) -> Result<Self> {
        if plan.k == 0 || plan.k > plan.pool.len() {
            return Err(Error::Config(format!(
                "retrieval k = {} does not fit a pool of {}",
                plan.k,
                plan.pool.len()
            )));
        }
        let vectors = par_map(plan.pool.examples(), 8, |ex| {
            embedder.embed(&EmbedRequest {
                role: plan.pool.role,
                id: ex.id,
                text: &task.input_text(&ex.fields),
            })
        });
        let pool_vectors = vectors.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan,
            embedder,
            pool_vectors,
        })
    }

    pub fn plan(&self) -> &RetrievalPlan {
        &self.plan
    }

    pub fn provider_id(&self) -> String {
        self.embedder.provider_id()
    }

    /// Cosine distance from the query to every pool example, in pool order.
    pub fn distances(&self, task: &TaskSpec, query: &Example, role: DatasetRole) -> Result<Vec<f64>> {
        let text = task.input_text(&query.fields);
        let q = self.embedder.embed(&EmbedRequest {
            role,
            id: query.id,
            text: &text,
        })?;
        if q.values.len() != self.pool_vectors[0].values.len() {
            return Err(Error::Lookup("query and pool embeddings differ in length".into()));
        }
        Ok(self.pool_vectors.iter().map(|p| cosine_distance(&q, p)).collect())
    }

    fn assemble(&self, mut chosen: Vec<(f64, usize)>, backfilled: usize) -> Result<Retrieved> {
        chosen.sort_by(|a, b| a.0.total_cmp(&b.0).then(self.plan.pool.examples()[a.1].id.cmp(&self.plan.pool.examples()[b.1].id)));
        if self.plan.order == DemoOrder::NearestLast {
            chosen.reverse();
        }
        let members = chosen
            .into_iter()
            .map(|(_, i)| self.plan.pool.examples()[i].clone())
            .collect();
        let method = match self.plan.method {
            RetrievalMethod::Kate => "kate",
            RetrievalMethod::Ambig => "ambig",
        };
        Ok(Retrieved {
            demos: DemonstrationSet::new(
                members,
                self.plan.task.clone(),
                Provenance {
                    method: method.into(),
                    seed: 0,
                    iterations: 0,
                },
            )?,
            backfilled,
        })
    }

    /// Pool indices sorted nearest first, ties by ascending id.
    fn nearest(&self, distances: &[f64], keep: impl Fn(&Example) -> bool) -> Vec<(f64, usize)> {
        let pool = self.plan.pool.examples();
        let mut idx: Vec<(f64, usize)> = distances
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(&pool[*i]))
            .map(|(i, d)| (*d, i))
            .collect();
        idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(pool[a.1].id.cmp(&pool[b.1].id)));
        idx
    }

    /// The `k` pool examples closest to the query.
    pub fn kate(&self, task: &TaskSpec, query: &Example, role: DatasetRole) -> Result<Retrieved> {
        let distances = self.distances(task, query, role)?;
        let mut nearest = self.nearest(&distances, |_| true);
        nearest.truncate(self.plan.k);
        self.assemble(nearest, 0)
    }

    /// Nearest examples whose label is among the query's zero-shot top two,
    /// backfilled with the nearest remaining examples when too few qualify.
    pub fn ambig(&self, model: &dyn LabelModel, task: &TaskSpec, query: &Example, role: DatasetRole) -> Result<Retrieved> {
        let request = ScoreRequest::build(task, &[], &query.fields)?;
        let zero_shot = label_distribution(model, &request, &task.label_set)?;
        let top2: BTreeSet<&str> = zero_shot.ranked_labels().into_iter().take(2).collect();
        let distances = self.distances(task, query, role)?;
        let mut chosen = self.nearest(&distances, |e| top2.contains(e.label.as_str()));
        chosen.truncate(self.plan.k);
        let mut backfilled = 0;
        if chosen.len() < self.plan.k {
            let taken: BTreeSet<usize> = chosen.iter().map(|(_, i)| *i).collect();
            let extra: Vec<(f64, usize)> = self
                .nearest(&distances, |_| true)
                .into_iter()
                .filter(|(_, i)| !taken.contains(i))
                .take(self.plan.k - chosen.len())
                .collect();
            backfilled = extra.len();
            chosen.extend(extra);
        }
        self.assemble(chosen, backfilled)
    }

    pub fn retrieve(
        &self,
        model: &dyn LabelModel,
        task: &TaskSpec,
        query: &Example,
        role: DatasetRole,
    ) -> Result<Retrieved> {
        match self.plan.method {
            RetrievalMethod::Kate => self.kate(task, query, role),
            RetrievalMethod::Ambig => self.ambig(model, task, query, role),
        }
    }
}

impl std::fmt::Debug for Retriever {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Retriever")
            .field("method", &self.plan.method)
            .field("k", &self.plan.k)
            .field("provider", &self.embedder.provider_id())
            .finish()
    }
}
