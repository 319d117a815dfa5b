//! Selection methods behind one trait, looked up by name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::artifact::{PromptArtifact, SelectionArtifact};
use crate::backend::LabelModel;
use crate::baselines::{best_of_n_select, uniform_select, BestOfConfig, DemoOrder, RetrievalMethod, RetrievalPlan};
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::selection::{cap_pool, icr_select, IcrConfig, InitMode, ScoringContext};
use crate::task::{Dataset, TaskSpec};

/// Every knob any selector reads. Unused fields are ignored by a given method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    pub m: usize,
    pub n: usize,
    pub iterations: usize,
    pub seed: u64,
    pub pool_cap: Option<usize>,
    pub init_mode: InitMode,
    pub skip_failures: bool,
    pub trials: usize,
    pub validation_size: Option<usize>,
    pub metric: Metric,
    /// Per-query demonstrations for retrieval methods; defaults to `m`.
    pub k: Option<usize>,
    pub embeddings: String,
    pub order: DemoOrder,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            m: 16,
            n: 8,
            iterations: 1,
            seed: 0,
            pool_cap: Some(500),
            init_mode: InitMode::Uniform,
            skip_failures: false,
            trials: 10,
            validation_size: Some(100),
            metric: Metric::Accuracy,
            k: None,
            embeddings: "hashing".into(),
            order: DemoOrder::NearestLast,
        }
    }
}

impl SelectParams {
    pub fn icr_config(&self) -> IcrConfig {
        IcrConfig {
            m: self.m,
            n: self.n,
            iterations: self.iterations,
            seed: self.seed,
            pool_cap: self.pool_cap,
            init_mode: self.init_mode,
            scoring: ScoringContext::Current,
            skip_failures: self.skip_failures,
        }
    }

    /// Pool after the optional stratified cap.
    pub fn capped_pool(&self, task: &TaskSpec, pool: &Dataset) -> Result<Dataset> {
        match self.pool_cap {
            Some(cap) if cap < self.m => Err(Error::Config(format!("pool cap {cap} is smaller than m = {}", self.m))),
            _ => cap_pool(task, pool, &self.icr_config()),
        }
    }
}

pub struct SelectContext<'a> {
    pub task: &'a TaskSpec,
    pub pool: &'a Dataset,
    pub validation: Option<&'a Dataset>,
    pub model: Option<&'a dyn LabelModel>,
    pub params: &'a SelectParams,
}

impl SelectContext<'_> {
    fn model(&self, method: &str) -> Result<&dyn LabelModel> {
        self.model
            .ok_or_else(|| Error::Config(format!("method '{method}' needs a model backend")))
    }
}

pub trait Selector: Send + Sync {
    fn name(&self) -> &str;
    /// Whether selection itself queries the model.
    fn needs_backend(&self) -> bool;
    fn needs_validation(&self) -> bool {
        false
    }
    fn select(&self, ctx: &SelectContext) -> Result<SelectionArtifact>;
}

fn params_json(params: &SelectParams) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(params)?)
}

pub struct IcrSelector;

impl Selector for IcrSelector {
    fn name(&self) -> &str {
        "icr"
    }

    fn needs_backend(&self) -> bool {
        true
    }

    fn select(&self, ctx: &SelectContext) -> Result<SelectionArtifact> {
        let model = ctx.model(self.name())?;
        let outcome = icr_select(model, ctx.task, ctx.pool, &ctx.params.icr_config())?;
        let mut art = PromptArtifact::new(ctx.task, self.name(), params_json(ctx.params)?, ctx.params.seed, outcome.demos);
        art.trace = Some(outcome.trace);
        art.skipped_ids = outcome.skipped;
        let mut art = SelectionArtifact::Prompt(art);
        art.seal()?;
        Ok(art)
    }
}

pub struct UniformSelector;

impl Selector for UniformSelector {
    fn name(&self) -> &str {
        "uniform"
    }

    fn needs_backend(&self) -> bool {
        false
    }

    fn select(&self, ctx: &SelectContext) -> Result<SelectionArtifact> {
        let pool = ctx.params.capped_pool(ctx.task, ctx.pool)?;
        let demos = uniform_select(ctx.task, &pool, ctx.params.m, ctx.params.seed)?;
        let mut art = SelectionArtifact::Prompt(PromptArtifact::new(
            ctx.task,
            self.name(),
            params_json(ctx.params)?,
            ctx.params.seed,
            demos,
        ));
        art.seal()?;
        Ok(art)
    }
}

pub struct BestOfSelector;

impl Selector for BestOfSelector {
    fn name(&self) -> &str {
        "best-of-10"
    }

    fn needs_backend(&self) -> bool {
        true
    }

    fn needs_validation(&self) -> bool {
        true
    }

    fn select(&self, ctx: &SelectContext) -> Result<SelectionArtifact> {
        let model = ctx.model(self.name())?;
        let validation = ctx
            .validation
            .ok_or_else(|| Error::Config("best-of-10 needs a validation set".into()))?;
        let pool = ctx.params.capped_pool(ctx.task, ctx.pool)?;
        let config = BestOfConfig {
            trials: ctx.params.trials,
            validation_size: ctx.params.validation_size,
            metric: ctx.params.metric,
            skip_failures: ctx.params.skip_failures,
        };
        let outcome = best_of_n_select(model, ctx.task, &pool, ctx.params.m, validation, ctx.params.seed, &config)?;
        let mut art = PromptArtifact::new(ctx.task, self.name(), params_json(ctx.params)?, ctx.params.seed, outcome.demos);
        art.trial_scores = Some(outcome.trial_scores);
        let mut art = SelectionArtifact::Prompt(art);
        art.seal()?;
        Ok(art)
    }
}

pub struct RetrievalSelector(pub RetrievalMethod);

impl Selector for RetrievalSelector {
    fn name(&self) -> &str {
        match self.0 {
            RetrievalMethod::Kate => "kate",
            RetrievalMethod::Ambig => "ambig",
        }
    }

    fn needs_backend(&self) -> bool {
        false
    }

    fn select(&self, ctx: &SelectContext) -> Result<SelectionArtifact> {
        let pool = ctx.params.capped_pool(ctx.task, ctx.pool)?;
        let k = ctx.params.k.unwrap_or(ctx.params.m);
        let plan = RetrievalPlan::new(ctx.task, self.0, k, ctx.params.embeddings.clone(), ctx.params.order, pool)?;
        Ok(SelectionArtifact::Plan(plan))
    }
}

/// Selectors by name.
pub struct SelectorRegistry {
    selectors: BTreeMap<String, Box<dyn Selector>>,
}

impl Default for SelectorRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(IcrSelector));
        reg.register(Box::new(UniformSelector));
        reg.register(Box::new(BestOfSelector));
        reg.register(Box::new(RetrievalSelector(RetrievalMethod::Kate)));
        reg.register(Box::new(RetrievalSelector(RetrievalMethod::Ambig)));
        reg
    }
}

impl SelectorRegistry {
    pub fn empty() -> Self {
        Self {
            selectors: BTreeMap::new(),
        }
    }

    /// Add or replace a selector under its own name.
    pub fn register(&mut self, selector: Box<dyn Selector>) {
        self.selectors.insert(selector.name().to_string(), selector);
    }

    pub fn names(&self) -> Vec<&str> {
        self.selectors.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Selector> {
        self.selectors.get(name).map(|s| s.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown method '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }
}
